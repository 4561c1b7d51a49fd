// src/repstore.cc

// Copyright 2026  The segprobe Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "segprobe/repstore.h"

#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "binio.h"
#include "segprobe/error.h"
#include "segprobe/log.h"
#include "segprobe/table.h"

namespace segprobe {

namespace {

constexpr std::string_view kMagic{"SEGREP1\0", 8};
constexpr std::uint16_t kByteOrderMark = 0x0102;
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 24;
constexpr const char* kManifestName = "manifest.tsv";

}  // namespace

const RepUtterance* RepManifest::find(const std::string& utterance_id) const {
  for (const auto& u : utterances) {
    if (u.utterance_id == utterance_id) return &u;
  }
  return nullptr;
}

SegrepReader::SegrepReader(std::filesystem::path dir) : dir_(std::move(dir)) {
  const auto path = dir_ / kManifestName;
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("{}: missing SEGREP1 manifest", path.string()));
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto f = split(line, '\t');
    const auto ctx = fmt::format("{}:{}", path.string(), lineno);
    if (f[0] == "utterance") {
      if (f.size() != 5) throw ParseError(ctx + ": utterance line needs 5 fields");
      RepUtterance u;
      u.utterance_id = f[1];
      u.n_frames = static_cast<std::size_t>(parse_int(f[2], ctx));
      u.file = f[3];
      u.offset = static_cast<std::size_t>(parse_int(f[4], ctx));
      manifest_.utterances.push_back(std::move(u));
      continue;
    }
    if (f.size() != 2) throw ParseError(ctx + ": expected 'key<TAB>value'");
    kv[f[0]] = f[1];
  }
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError(fmt::format("{}: missing key '{}'", path.string(), key));
    return it->second;
  };
  if (need("format") != "SEGREP1") {
    throw ParseError(fmt::format("{}: not a SEGREP1 manifest", path.string()));
  }
  if (parse_int(need("version"), "version") != kVersion) {
    throw ParseError(fmt::format("{}: unsupported SEGREP1 version {}", path.string(), need("version")));
  }
  manifest_.model_id = need("model_id");
  manifest_.n_layers = static_cast<std::size_t>(parse_int(need("n_layers"), "n_layers"));
  manifest_.dim = static_cast<std::size_t>(parse_int(need("dim"), "dim"));
  manifest_.clock.hop = parse_double(need("frame_hop"), "frame_hop");
  manifest_.clock.offset = kv.contains("frame_offset")
                               ? parse_double(kv["frame_offset"], "frame_offset")
                               : 0.5 * manifest_.clock.hop;
  if (kv.contains("layer_base")) manifest_.layer_base = static_cast<int>(parse_int(kv["layer_base"], "layer_base"));
  if (manifest_.n_layers < 1 || manifest_.dim < 1 || !(manifest_.clock.hop > 0)) {
    throw ValidationError(fmt::format("{}: need n_layers >= 1, dim >= 1, frame_hop > 0", path.string()));
  }
  for (auto& u : manifest_.utterances) {
    u.size = manifest_.n_layers * u.n_frames * manifest_.dim * sizeof(float);
  }
}

LayerMatrix SegrepReader::read_layer(const std::string& utterance_id, std::size_t layer) const {
  auto all = read_utterance(utterance_id);
  if (layer >= all.size()) {
    throw ValidationError(fmt::format("{}: layer {} out of range ({} layers)", utterance_id, layer,
                                      all.size()));
  }
  return std::move(all[layer]);
}

std::vector<LayerMatrix> SegrepReader::read_utterance(const std::string& utterance_id) const {
  const RepUtterance* u = manifest_.find(utterance_id);
  if (u == nullptr) {
    throw ValidationError(fmt::format("{}: utterance '{}' not in manifest", dir_.string(), utterance_id));
  }
  const auto path = dir_ / u->file;
  const std::string bytes = read_file(path);
  binio::Cursor c(bytes, path.string());
  if (c.take(kMagic.size()) != kMagic) throw ParseError(path.string() + ": bad SEGREP1 magic");
  const auto bom = c.u16();
  if (bom != kByteOrderMark) {
    throw ParseError(fmt::format("{}: endianness marker mismatch (read 0x{:04x})", path.string(), bom));
  }
  const auto version = c.u16();
  if (version != kVersion) throw ParseError(fmt::format("{}: unsupported version {}", path.string(), version));
  const std::size_t n_layers = c.u32();
  const std::size_t n_frames = c.u32();
  const std::size_t dim = c.u32();
  if (n_layers != manifest_.n_layers) {
    throw ValidationError(fmt::format("{}: layer count mismatch (manifest {}, payload {})",
                                      path.string(), manifest_.n_layers, n_layers));
  }
  if (dim != manifest_.dim || n_frames != u->n_frames) {
    throw ValidationError(fmt::format("{}: shape mismatch (manifest {}x{}, payload {}x{})", path.string(),
                                      u->n_frames, manifest_.dim, n_frames, dim));
  }
  if (c.remaining() != u->size) {
    throw ParseError(fmt::format("{}: payload is {} bytes, expected {}{}", path.string(), c.remaining(),
                                 u->size, c.remaining() < u->size ? " (truncated file)" : ""));
  }
  std::vector<LayerMatrix> out(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    out[l].layer = l;
    out[l].data.resize(static_cast<Eigen::Index>(n_frames), static_cast<Eigen::Index>(dim));
    float* dst = out[l].data.data();
    for (std::size_t i = 0; i < n_frames * dim; ++i) {
      dst[i] = c.f32();
      if (!std::isfinite(dst[i])) {
        throw ValidationError(fmt::format("{}: non-finite value in layer {}", path.string(), l));
      }
    }
  }
  return out;
}

SegrepWriter::SegrepWriter(std::filesystem::path dir, std::string model_id, std::size_t n_layers,
                           std::size_t dim, FrameClock clock, int layer_base)
    : dir_(std::move(dir)) {
  if (n_layers < 1 || dim < 1 || !(clock.hop > 0)) {
    throw ValidationError("SegrepWriter: need n_layers >= 1, dim >= 1, hop > 0");
  }
  std::filesystem::create_directories(dir_);
  const auto lock = dir_ / ".lock";
  const int fd = ::open(lock.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw Error(fmt::format("{}: directory is locked by another writer", dir_.string()));
  }
  ::close(fd);
  manifest_.model_id = std::move(model_id);
  manifest_.n_layers = n_layers;
  manifest_.dim = dim;
  manifest_.clock = clock;
  manifest_.layer_base = layer_base;
}

SegrepWriter::~SegrepWriter() {
  try {
    if (!finished_) finish();
  } catch (const std::exception& e) {
    log_warn("SegrepWriter: {}", e.what());
  }
  std::error_code ec;
  std::filesystem::remove(dir_ / ".lock", ec);
}

void SegrepWriter::add(const std::string& utterance_id, const std::vector<FloatMatrix>& layers) {
  if (finished_) throw Error("SegrepWriter: add after finish");
  if (layers.size() != manifest_.n_layers) {
    throw ValidationError(fmt::format("{}: layer count mismatch (expected {}, got {})", utterance_id,
                                      manifest_.n_layers, layers.size()));
  }
  if (manifest_.find(utterance_id) != nullptr) {
    throw ValidationError(fmt::format("duplicate utterance '{}'", utterance_id));
  }
  const auto n_frames = static_cast<std::size_t>(layers[0].rows());
  std::string out(kMagic);
  binio::put_u16(out, kByteOrderMark);
  binio::put_u16(out, kVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(manifest_.n_layers));
  binio::put_u32(out, static_cast<std::uint32_t>(n_frames));
  binio::put_u32(out, static_cast<std::uint32_t>(manifest_.dim));
  for (const auto& m : layers) {
    if (static_cast<std::size_t>(m.rows()) != n_frames || static_cast<std::size_t>(m.cols()) != manifest_.dim) {
      throw ValidationError(fmt::format("{}: shape mismatch across layers", utterance_id));
    }
    const float* src = m.data();
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      if (!std::isfinite(src[i])) throw ValidationError(fmt::format("{}: non-finite value", utterance_id));
      binio::put_f32(out, src[i]);
    }
  }
  RepUtterance u;
  u.utterance_id = utterance_id;
  u.n_frames = n_frames;
  u.file = utterance_id + ".bin";
  u.offset = kHeaderBytes;
  u.size = out.size() - kHeaderBytes;
  write_file_atomic(dir_ / u.file, out);
  manifest_.utterances.push_back(std::move(u));
}

void SegrepWriter::finish() {
  finished_ = true;
  std::ostringstream os;
  os << "# SEGREP1 manifest\n";
  os << "format\tSEGREP1\n";
  os << "version\t" << kVersion << "\n";
  os << "model_id\t" << manifest_.model_id << "\n";
  os << "n_layers\t" << manifest_.n_layers << "\n";
  os << "dim\t" << manifest_.dim << "\n";
  os << "frame_hop\t" << format_exact(manifest_.clock.hop) << "\n";
  os << "frame_offset\t" << format_exact(manifest_.clock.offset) << "\n";
  os << "layer_base\t" << manifest_.layer_base << "\n";
  for (const auto& u : manifest_.utterances) {
    os << "utterance\t" << u.utterance_id << "\t" << u.n_frames << "\t" << u.file << "\t" << u.offset << "\n";
  }
  write_file_atomic(dir_ / kManifestName, os.str());
}

SegmentVector segment_vector(const LayerMatrix& m, const PhoneToken& token, const FrameClock& clock) {
  SegmentVector out;
  out.token_id = token.token_id;
  out.layer = m.layer;
  out.v = Eigen::VectorXd::Zero(m.data.cols());
  std::size_t n = 0;
  for (Eigen::Index k = 0; k < m.data.rows(); ++k) {
    const double c = clock.center(k);
    if (c >= token.t_start && c < token.t_end) {
      out.v += m.data.row(k).cast<double>().transpose();
      ++n;
    }
  }
  if (n == 0) {
    throw ValidationError(fmt::format("token {}: segment shorter than frame hop (no frame center in [{}, {}))",
                                      token.token_id, token.t_start, token.t_end));
  }
  out.v /= static_cast<double>(n);
  return out;
}

}  // namespace segprobe

namespace segprobe {

std::vector<Eigen::MatrixXd> segment_matrices(const SegrepReader& reader,
                                              const std::vector<PhoneToken>& tokens) {
  const auto& man = reader.manifest();
  std::vector<Eigen::MatrixXd> out(man.n_layers,
                                   Eigen::MatrixXd(static_cast<Eigen::Index>(tokens.size()),
                                                   static_cast<Eigen::Index>(man.dim)));
  std::map<std::string, std::vector<std::size_t>> by_utt;
  for (std::size_t i = 0; i < tokens.size(); ++i) by_utt[tokens[i].utterance_id].push_back(i);
  for (const auto& [utt, idx] : by_utt) {
    const auto layers = reader.read_utterance(utt);
    for (const auto& lm : layers) {
      for (std::size_t i : idx) {
        out[lm.layer].row(static_cast<Eigen::Index>(i)) =
            segment_vector(lm, tokens[i], man.clock).v.transpose();
      }
    }
  }
  return out;
}

}  // namespace segprobe
