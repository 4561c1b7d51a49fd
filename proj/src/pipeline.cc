// src/pipeline.cc

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

#include "segprobe/pipeline.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "segprobe/error.h"
#include "segprobe/log.h"
#include "segprobe/regress.h"
#include "segprobe/repstore.h"
#include "segprobe/table.h"
#include "segprobe/wav.h"

namespace segprobe {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

namespace {

// Typed access to one JSON object; unknown keys are rejected on finish().
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(fmt::format("config: '{}' must be an object", name()));
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(key);
  }

  template <typename T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ValidationError(fmt::format("config: missing '{}'", qualified(key)));
    return convert<T>(key);
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    static const json kEmpty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : kEmpty, qualified(key));
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ValidationError(fmt::format("config: unknown key '{}'", qualified(k)));
    }
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string name() const { return path_.empty() ? "<root>" : path_; }

  template <typename T>
  T convert(const std::string& key) const {
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError(fmt::format("config: '{}' has the wrong type", qualified(key)));
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

CorpusPaths corpus_paths(Section s, const fs::path& base, bool with_ratings) {
  CorpusPaths c;
  c.textgrids = resolve(base, s.require<std::string>("textgrids"));
  c.audio = resolve(base, s.require<std::string>("audio"));
  if (with_ratings) c.ratings = resolve(base, s.require<std::string>("ratings"));
  s.finish();
  return c;
}

std::string canonical_json(json j, std::uint64_t seed) {
  j.erase("jobs");  // does not affect results
  j["seed"] = seed;
  return j.dump();
}

}  // namespace

RunConfig RunConfig::parse(const std::string& json_text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("config: {}", e.what()));
  }
  RunConfig c;
  Section root(j, "");
  c.output_dir = resolve(base_dir, root.require<std::string>("output_dir"));
  c.seed = root.get<std::uint64_t>("seed", 1);
  c.jobs = root.get<int>("jobs", 1);
  c.targets = root.require<std::vector<std::string>>("targets");

  auto res = root.sub("resources");
  c.feature_mapping = resolve(base_dir, res.require<std::string>("feature_mapping"));
  c.segment_pairs = resolve(base_dir, res.require<std::string>("segment_pairs"));
  res.finish();

  auto tiers = root.sub("alignment");
  c.alignment.phone_tier = tiers.get<std::string>("phone_tier", c.alignment.phone_tier);
  c.alignment.word_tier = tiers.get<std::string>("word_tier", c.alignment.word_tier);
  c.alignment.nesting_tolerance = tiers.get<double>("nesting_tolerance", c.alignment.nesting_tolerance);
  c.alignment.whole_word_position =
      parse_position(tiers.get<std::string>("whole_word_position", "Initial"));
  tiers.finish();

  c.analysis = corpus_paths(root.sub("analysis"), base_dir, true);
  auto baselines = root.sub("baselines");
  c.baseline_ae = corpus_paths(baselines.sub("AE"), base_dir, false);
  c.baseline_ie = corpus_paths(baselines.sub("IE"), base_dir, false);
  baselines.finish();

  if (root.has("representations")) {
    const json& reps = root.raw("representations");
    if (!reps.is_array()) throw ValidationError("config: 'representations' must be an array");
    for (std::size_t i = 0; i < reps.size(); ++i) {
      Section r(reps[i], fmt::format("representations[{}]", i));
      RepresentationPaths p;
      p.name = r.require<std::string>("name");
      p.analysis = resolve(base_dir, r.require<std::string>("analysis"));
      p.ae = resolve(base_dir, r.require<std::string>("AE"));
      p.ie = resolve(base_dir, r.require<std::string>("IE"));
      r.finish();
      if (p.name == "MFCC") throw ValidationError("config: representation name 'MFCC' is reserved");
      c.representations.push_back(std::move(p));
    }
  }

  auto m = root.sub("mfcc");
  c.include_mfcc = m.get<bool>("probe_baseline", true);
  c.mfcc.sample_rate = m.get<int>("sample_rate", c.mfcc.sample_rate);
  c.mfcc.window = m.get<double>("window", c.mfcc.window);
  c.mfcc.hop = m.get<double>("hop", c.mfcc.hop);
  c.mfcc.n_fft = m.get<int>("n_fft", c.mfcc.n_fft);
  c.mfcc.n_mels = m.get<int>("n_mels", c.mfcc.n_mels);
  c.mfcc.n_coeffs = m.get<int>("n_coeffs", c.mfcc.n_coeffs);
  c.mfcc.preemphasis = m.get<double>("preemphasis", c.mfcc.preemphasis);
  c.mfcc.log_floor = m.get<double>("log_floor", c.mfcc.log_floor);
  m.finish();
  c.mfcc.validate();

  auto ph = root.sub("phonet");
  c.phonet.context = ph.get<int>("context", c.phonet.context);
  c.phonet.hidden = ph.get<int>("hidden", c.phonet.hidden);
  c.phonet.max_epochs = ph.get<int>("max_epochs", c.phonet.max_epochs);
  c.phonet.patience = ph.get<int>("patience", c.phonet.patience);
  c.phonet.learning_rate = ph.get<double>("learning_rate", c.phonet.learning_rate);
  c.phonet.batch_size = ph.get<int>("batch_size", c.phonet.batch_size);
  c.phonet.validation_fraction = ph.get<double>("validation_fraction", c.phonet.validation_fraction);
  const auto opt = ph.get<std::string>("optimizer", "adam");
  if (opt == "adam") {
    c.phonet.optimizer = FeatureOptimizer::Adam;
  } else if (opt == "sgd") {
    c.phonet.optimizer = FeatureOptimizer::GradientDescent;
  } else {
    throw ValidationError(fmt::format("config: phonet.optimizer must be 'adam' or 'sgd', got '{}'", opt));
  }
  ph.finish();

  auto pr = root.sub("probe");
  c.probe_kinds.clear();
  for (const auto& k : pr.get<std::vector<std::string>>("kinds", {"LR", "SVM"})) {
    try {
      c.probe_kinds.push_back(parse_probe_kind(k));
    } catch (const ParseError& e) {
      throw ValidationError(fmt::format("config: probe.kinds: {}", e.what()));
    }
  }
  if (c.probe_kinds.empty()) throw ValidationError("config: probe.kinds is empty");
  c.probe.lambda_grid = pr.get<std::vector<double>>("lambda_grid", {});
  c.probe.grid_size = pr.get<int>("grid_size", c.probe.grid_size);
  c.probe.grid_ratio = pr.get<double>("grid_ratio", c.probe.grid_ratio);
  c.probe.cv_folds = pr.get<int>("cv_folds", c.probe.cv_folds);
  c.probe.test_fraction = pr.get<double>("test_fraction", c.probe.test_fraction);
  c.probe.tol = pr.get<double>("tol", c.probe.tol);
  c.probe.max_iter = pr.get<int>("max_iter", c.probe.max_iter);
  pr.finish();
  if (c.probe.cv_folds < 2) throw ValidationError("config: probe.cv_folds must be at least 2");
  if (c.probe.grid_size < 1 || !(c.probe.grid_ratio > 0 && c.probe.grid_ratio <= 1)) {
    throw ValidationError("config: probe grid needs grid_size >= 1 and grid_ratio in (0, 1]");
  }
  if (!(c.probe.test_fraction > 0 && c.probe.test_fraction < 1)) {
    throw ValidationError("config: probe.test_fraction must be in (0, 1)");
  }
  if (!(c.probe.tol > 0) || c.probe.max_iter < 1) throw ValidationError("config: probe tol/max_iter");
  for (double l : c.probe.lambda_grid) {
    if (!(l > 0)) throw ValidationError("config: probe.lambda_grid values must be positive");
  }

  auto cca = root.sub("cca");
  c.cca.variance_kept = cca.get<double>("variance_kept", c.cca.variance_kept);
  c.cca.ridge = cca.get<double>("ridge", c.cca.ridge);
  const auto baseline = cca.get<std::string>("baseline", "pooled");
  if (baseline != "pooled" && baseline != "per-accent") {
    throw ValidationError("config: cca.baseline must be 'pooled' or 'per-accent'");
  }
  c.cca_pooled_baseline = baseline == "pooled";
  cca.finish();
  c.cca.validate();

  auto dist = root.sub("distance");
  c.distance_cap = dist.get<std::size_t>("cap", c.distance_cap);
  c.distance_probe = parse_probe_kind(dist.get<std::string>("probe", "LR"));
  dist.finish();

  auto reg = root.sub("regression");
  c.alpha = reg.get<double>("alpha", c.alpha);
  reg.finish();
  root.finish();

  if (c.targets.empty()) throw ValidationError("config: 'targets' is empty");
  if (c.jobs < 1) throw ValidationError("config: 'jobs' must be at least 1");
  c.probe.seed = c.seed;
  c.probe.jobs = c.jobs;
  c.phonet.seed = c.seed;
  c.canonical = canonical_json(j, c.seed);
  c.hash = fnv1a_hex(c.canonical);
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError(fmt::format("config file {} does not exist", path.string()));
  return parse(read_file(path), path.parent_path());
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  probe.seed = s;
  phonet.seed = s;
  canonical = canonical_json(json::parse(canonical), s);
  hash = fnv1a_hex(canonical);
}

void RunConfig::validate() const {
  auto need = [](const fs::path& p, std::string_view what) {
    if (!fs::exists(p)) throw ValidationError(fmt::format("config: {} '{}' does not exist", what, p.string()));
  };
  need(feature_mapping, "feature mapping");
  need(segment_pairs, "segment pairs");
  need(analysis.textgrids, "analysis textgrids");
  need(analysis.audio, "analysis audio");
  need(analysis.ratings, "analysis ratings");
  need(baseline_ae.textgrids, "AE textgrids");
  need(baseline_ae.audio, "AE audio");
  need(baseline_ie.textgrids, "IE textgrids");
  need(baseline_ie.audio, "IE audio");
  for (const auto& r : representations) {
    need(r.analysis, r.name + " analysis store");
    need(r.ae, r.name + " AE store");
    need(r.ie, r.name + " IE store");
  }
  const auto pairs = load_segment_pairs(segment_pairs);
  for (const auto& t : targets) {
    if (std::none_of(pairs.begin(), pairs.end(), [&](const SegmentPair& p) { return p.nonnative == t; })) {
      throw ValidationError(fmt::format("config: target '{}' has no segment pair", t));
    }
  }
  if (!include_mfcc && representations.empty()) {
    throw ValidationError("config: no representations to probe (MFCC disabled and none listed)");
  }
}

std::vector<std::string> stage_dependencies(const std::string& stage) {
  static const std::map<std::string, std::vector<std::string>> deps = {
      {"ingest", {}},
      {"mfcc", {"ingest"}},
      {"phonet-train", {"mfcc"}},
      {"phonet-score", {"phonet-train"}},
      {"probe", {"mfcc"}},
      {"svcca", {"probe", "phonet-score"}},
      {"distance", {"probe"}},
      {"regress", {"distance"}},
      {"report", {"regress", "svcca"}},
  };
  auto it = deps.find(stage);
  if (it == deps.end()) throw ValidationError(fmt::format("unknown stage '{}'", stage));
  return it->second;
}

namespace {

constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Artifact helpers

struct Ctx {
  const RunConfig& cfg;
  fs::path out;

  fs::path stage_dir(const std::string& stage) const { return out / stage; }
  fs::path stamp(const std::string& stage) const { return out / ".stages" / (stage + ".done"); }

  void emit(const fs::path& path, TsvTable t, const std::vector<std::string>& extra = {}) const {
    t.comments = {fmt::format("config_hash: {}", cfg.hash), fmt::format("segprobe {}", kVersion)};
    t.comments.insert(t.comments.end(), extra.begin(), extra.end());
    std::ostringstream os;
    write_tsv(os, t);
    write_file_atomic(path, os.str());
  }
};

bool stage_complete(const Ctx& c, const std::string& stage) {
  const auto p = c.stamp(stage);
  return fs::exists(p) && trim(read_file(p)) == c.cfg.hash;
}

// Transitive dependencies in run order.
void collect_dependencies(const std::string& stage, std::vector<std::string>& out) {
  for (const auto& d : stage_dependencies(stage)) {
    collect_dependencies(d, out);
    if (std::find(out.begin(), out.end(), d) == out.end()) out.push_back(d);
  }
}

void require_upstream(const Ctx& c, const std::string& stage) {
  std::vector<std::string> deps;
  collect_dependencies(stage, deps);
  for (const auto& d : deps) {
    if (!stage_complete(c, d)) {
      throw DependencyError(d, fmt::format("stage '{}' needs the artifacts of stage '{}', which has not been run "
                                           "with this configuration (run `segprobe {}` first)",
                                           stage, d, d));
    }
  }
}

std::vector<std::string> list_utterances(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".TextGrid") out.push_back(e.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ValidationError(fmt::format("no .TextGrid files in {}", dir.string()));
  return out;
}

enum class CorpusId { Analysis, AE, IE };
constexpr std::array<CorpusId, 3> kCorpora = {CorpusId::Analysis, CorpusId::AE, CorpusId::IE};

std::string corpus_name(CorpusId id) {
  switch (id) {
    case CorpusId::Analysis: return "analysis";
    case CorpusId::AE: return "AE";
    case CorpusId::IE: return "IE";
  }
  return {};
}

const CorpusPaths& corpus_paths(const RunConfig& cfg, CorpusId id) {
  switch (id) {
    case CorpusId::Analysis: return cfg.analysis;
    case CorpusId::AE: return cfg.baseline_ae;
    case CorpusId::IE: return cfg.baseline_ie;
  }
  return cfg.analysis;
}

std::vector<SegmentPair> target_pairs(const RunConfig& cfg) {
  const auto all = load_segment_pairs(cfg.segment_pairs);
  std::vector<SegmentPair> out;
  for (const auto& t : cfg.targets) {
    auto it = std::find_if(all.begin(), all.end(), [&](const SegmentPair& p) { return p.nonnative == t; });
    if (it == all.end()) throw ValidationError(fmt::format("target '{}' has no segment pair", t));
    out.push_back(*it);
  }
  return out;
}

std::vector<std::string> utterances_of(const Ctx& c, CorpusId id) {
  const auto t = read_tsv(c.stage_dir("ingest") / "utterances.tsv");
  const auto cc = t.column("corpus"), cu = t.column("utterance_id");
  std::vector<std::string> out;
  for (const auto& row : t.rows) {
    if (row[cc] == corpus_name(id)) out.push_back(row[cu]);
  }
  return out;
}

std::vector<PhoneToken> tokens_of(const Ctx& c, CorpusId id) {
  return tokens_from_table(read_tsv(c.stage_dir("ingest") / fmt::format("tokens_{}.tsv", corpus_name(id))));
}

struct Representation {
  std::string name;
  std::map<CorpusId, fs::path> stores;
};

std::vector<Representation> representations(const Ctx& c) {
  std::vector<Representation> out;
  if (c.cfg.include_mfcc) {
    Representation r{"MFCC", {}};
    for (auto id : kCorpora) r.stores[id] = c.stage_dir("mfcc") / corpus_name(id);
    out.push_back(std::move(r));
  }
  for (const auto& p : c.cfg.representations) {
    out.push_back({p.name, {{CorpusId::Analysis, p.analysis}, {CorpusId::AE, p.ae}, {CorpusId::IE, p.ie}}});
  }
  return out;
}

std::vector<PhoneToken> filter_phone(const std::vector<PhoneToken>& tokens, const std::string& phone) {
  std::vector<PhoneToken> out;
  for (const auto& t : tokens) {
    if (t.phone == phone) out.push_back(t);
  }
  return out;
}

FrameMatrix frames_from_store(const SegrepReader& r, const std::string& utt) {
  const auto layer = r.read_layer(utt, 0);
  FrameMatrix f;
  f.data = layer.data.cast<double>();
  for (Eigen::Index k = 0; k < f.data.rows(); ++k) f.frame_times.push_back(r.manifest().clock.center(k));
  return f;
}

std::string join_ints(const std::set<int>& s) {
  std::vector<std::string> parts;
  for (int v : s) parts.push_back(std::to_string(v));
  return join(parts, ",");
}

std::set<int> parse_ints(const std::string& s) {
  std::set<int> out;
  if (s.empty()) return out;
  for (const auto& p : split(s, ',')) out.insert(static_cast<int>(parse_int(p, "selected feature index")));
  return out;
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& x, const std::set<int>& cols) {
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cols.size()));
  Eigen::Index k = 0;
  for (int j : cols) out.col(k++) = x.col(j);
  return out;
}

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& x, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Stages

void stage_ingest(const Ctx& c) {
  const auto& cfg = c.cfg;
  const auto pairs = target_pairs(cfg);
  const auto mapping = load_feature_mapping(cfg.feature_mapping);
  std::set<std::string> analysis_targets(cfg.targets.begin(), cfg.targets.end());
  std::set<std::string> ae_targets, ie_targets;
  for (const auto& p : pairs) {
    ae_targets.insert(p.native);
    ie_targets.insert(p.nonnative);
  }
  for (const auto& phone : ae_targets) {
    if (!mapping.contains(phone)) throw ValidationError(fmt::format("segment '{}' is not in the feature mapping", phone));
  }
  const auto ratings = read_ratings(cfg.analysis.ratings);

  TsvTable utts;
  utts.columns = {"corpus", "utterance_id"};
  for (auto id : kCorpora) {
    const auto& paths = corpus_paths(cfg, id);
    const auto& targets = id == CorpusId::Analysis ? analysis_targets : id == CorpusId::AE ? ae_targets : ie_targets;
    std::vector<PhoneToken> tokens;
    for (const auto& utt : list_utterances(paths.textgrids)) {
      const auto a = parse_textgrid(paths.textgrids / (utt + ".TextGrid"), cfg.alignment);
      std::optional<AccentLabel> accent;
      if (id == CorpusId::Analysis) {
        auto it = ratings.find(utt);
        if (it == ratings.end()) throw ValidationError(fmt::format("utterance '{}' has no accent ratings", utt));
        accent = merge_ratings(it->second);
      }
      auto t = extract_tokens(a, targets, accent, cfg.alignment);
      tokens.insert(tokens.end(), t.begin(), t.end());
      utts.rows.push_back({corpus_name(id), utt});
    }
    log_info("ingest: {} corpus, {} target tokens", corpus_name(id), tokens.size());
    c.emit(c.stage_dir("ingest") / fmt::format("tokens_{}.tsv", corpus_name(id)), token_table(tokens));
    if (id == CorpusId::Analysis) {
      c.emit(c.stage_dir("ingest") / "distribution.tsv", distribution_table(tabulate_distribution(tokens, cfg.targets)));
    }
  }
  c.emit(c.stage_dir("ingest") / "utterances.tsv", utts);
}

void stage_mfcc(const Ctx& c) {
  const auto& m = c.cfg.mfcc;
  for (auto id : kCorpora) {
    const auto dir = c.stage_dir("mfcc") / corpus_name(id);
    const FrameClock clock{m.hop, 0.5 * m.window};
    SegrepWriter w(dir, "mfcc", 1, static_cast<std::size_t>(m.n_coeffs), clock, 0);
    for (const auto& utt : utterances_of(c, id)) {
      const auto audio = read_wav(corpus_paths(c.cfg, id).audio / (utt + ".wav"));
      if (audio.sample_rate != m.sample_rate) {
        throw ValidationError(fmt::format("{}: sample rate {} Hz, configured {} Hz", utt, audio.sample_rate,
                                          m.sample_rate));
      }
      const auto f = compute_mfcc(audio.samples, m);
      w.add(utt, {f.data.cast<float>()});
    }
    w.finish();
  }
}

void stage_phonet_train(const Ctx& c) {
  const auto mapping = load_feature_mapping(c.cfg.feature_mapping);
  std::vector<FrameMatrix> inputs;
  std::vector<Eigen::MatrixXd> labels;
  for (auto id : {CorpusId::AE, CorpusId::IE}) {
    const SegrepReader store(c.stage_dir("mfcc") / corpus_name(id));
    for (const auto& utt : utterances_of(c, id)) {
      const auto a = parse_textgrid(corpus_paths(c.cfg, id).textgrids / (utt + ".TextGrid"), c.cfg.alignment);
      auto f = frames_from_store(store, utt);
      labels.push_back(label_frames(a, mapping, f.frame_times));
      inputs.push_back(std::move(f));
    }
  }
  TrainingReport rep;
  const auto model = train_feature_model(inputs, labels, c.cfg.phonet, &rep);
  model.save(c.stage_dir("phonet-train") / "model.bin");

  TsvTable curve;
  curve.columns = {"epoch", "train_loss", "val_loss"};
  for (std::size_t e = 0; e < rep.train_loss.size(); ++e) {
    curve.rows.push_back({std::to_string(e + 1), format_fixed(rep.train_loss[e], 6),
                          e < rep.val_loss.size() ? format_fixed(rep.val_loss[e], 6) : "NA"});
  }
  c.emit(c.stage_dir("phonet-train") / "training.tsv", curve, {fmt::format("best_epoch: {}", rep.best_epoch)});
  c.emit(c.stage_dir("phonet-train") / "feature_scores.tsv",
         feature_score_table(evaluate_features(model, inputs, labels, mapping.inventory())));
}

void stage_phonet_score(const Ctx& c) {
  const auto model = FeatureModel::load(c.stage_dir("phonet-train") / "model.bin");
  const auto mapping = load_feature_mapping(c.cfg.feature_mapping);
  const SegrepReader store(c.stage_dir("mfcc") / "analysis");
  const auto tokens = tokens_of(c, CorpusId::Analysis);
  std::map<std::string, std::vector<PhoneToken>> by_utt;
  for (const auto& t : tokens) by_utt[t.utterance_id].push_back(t);
  std::map<std::string, Eigen::VectorXd> profiles;
  for (const auto& [utt, toks] : by_utt) {
    for (auto& p : score_segments(model, frames_from_store(store, utt), toks)) profiles[p.token_id] = p.probs;
  }
  TsvTable t;
  t.columns = {"token_id"};
  for (const auto& n : mapping.inventory().names) t.columns.push_back(n);
  for (const auto& tok : tokens) {
    std::vector<std::string> row{tok.token_id};
    const auto& p = profiles.at(tok.token_id);
    for (Eigen::Index k = 0; k < p.size(); ++k) row.push_back(format_exact(p[k]));
    t.rows.push_back(std::move(row));
  }
  c.emit(c.stage_dir("phonet-score") / "profiles.tsv", t);
}

std::vector<int> accent_labels(const std::vector<PhoneToken>& tokens) {
  std::vector<int> y;
  for (const auto& t : tokens) y.push_back(static_cast<int>(*t.accent));
  return y;
}

void stage_probe(const Ctx& c) {
  const auto tokens = tokens_of(c, CorpusId::Analysis);
  TsvTable layers, selection;
  layers.columns = {"segment", "representation", "probe", "layer", "test_f1", "cv_f1", "lambda", "n_selected"};
  selection.columns = {"segment", "representation", "probe", "best_layer", "layer_label", "test_f1", "n_selected",
                       "selected"};
  for (const auto& rep : representations(c)) {
    const SegrepReader store(rep.stores.at(CorpusId::Analysis));
    const int base = store.manifest().layer_base;
    for (const auto& seg : c.cfg.targets) {
      const auto toks = filter_phone(tokens, seg);
      if (toks.empty()) throw ValidationError(fmt::format("no analysis tokens of segment '{}'", seg));
      const auto x = segment_matrices(store, toks);
      const auto y = accent_labels(toks);
      for (auto kind : c.cfg.probe_kinds) {
        ProbeConfig pc = c.cfg.probe;
        pc.kind = kind;
        ProbeResult r;
        try {
          r = layer_sweep(x, y, pc);
        } catch (const ValidationError& e) {
          throw ValidationError(fmt::format("probe {} / {} / {}: {}", seg, rep.name, to_string(kind), e.what()));
        }
        for (const auto& s : r.layers) {
          layers.rows.push_back({seg, rep.name, std::string(to_string(kind)), std::to_string(static_cast<int>(s.layer) + base),
                                 format_fixed(s.test_f1, 2), format_fixed(s.cv_f1, 2), format_exact(s.lambda),
                                 std::to_string(s.n_selected)});
        }
        selection.rows.push_back({seg, rep.name, std::string(to_string(kind)), std::to_string(r.best_layer),
                                  std::to_string(static_cast<int>(r.best_layer) + base),
                                  format_fixed(r.layers[r.best_layer].test_f1, 2),
                                  std::to_string(r.selected_features.size()), join_ints(r.selected_features)});
        log_info("probe: {} {} {} best layer {} F1 {:.1f}", seg, rep.name, to_string(kind),
                 static_cast<int>(r.best_layer) + base, r.layers[r.best_layer].test_f1);
      }
    }
  }
  c.emit(c.stage_dir("probe") / "layers.tsv", layers);
  c.emit(c.stage_dir("probe") / "selection.tsv", selection);
}

struct Selection {
  std::size_t best_layer = 0;
  std::set<int> selected;
};

// (segment, representation, probe) -> selection
std::map<std::tuple<std::string, std::string, std::string>, Selection> read_selection(const Ctx& c) {
  const auto t = read_tsv(c.stage_dir("probe") / "selection.tsv");
  const auto cs = t.column("segment"), cr = t.column("representation"), cp = t.column("probe"),
             cl = t.column("best_layer"), cf = t.column("selected");
  std::map<std::tuple<std::string, std::string, std::string>, Selection> out;
  for (const auto& row : t.rows) {
    out[{row[cs], row[cr], row[cp]}] = {static_cast<std::size_t>(parse_int(row[cl], "best_layer")), parse_ints(row[cf])};
  }
  return out;
}

void stage_svcca(const Ctx& c) {
  const auto mapping = load_feature_mapping(c.cfg.feature_mapping);
  const auto pairs = target_pairs(c.cfg);
  const auto tokens = tokens_of(c, CorpusId::Analysis);
  const auto sel = read_selection(c);

  const auto prof = read_tsv(c.stage_dir("phonet-score") / "profiles.tsv");
  std::map<std::string, std::size_t> prof_row;
  for (std::size_t i = 0; i < prof.rows.size(); ++i) prof_row[prof.rows[i][0]] = i;
  const auto& inv = mapping.inventory();

  TsvTable corr, weights;
  corr.columns = {"segment", "representation", "probe", "accent", "feature", "rho", "baseline_rho"};
  weights.columns = {"segment", "representation", "probe", "accent", "feature", "subset_weight", "baseline_weight",
                     "ratio"};
  for (const auto& rep : representations(c)) {
    const SegrepReader store(rep.stores.at(CorpusId::Analysis));
    for (const auto& pair : pairs) {
      const auto& seg = pair.nonnative;
      const auto toks = filter_phone(tokens, seg);
      const auto x_layers = segment_matrices(store, toks);
      Eigen::MatrixXd probs(static_cast<Eigen::Index>(toks.size()), static_cast<Eigen::Index>(inv.size()));
      for (std::size_t i = 0; i < toks.size(); ++i) {
        auto it = prof_row.find(toks[i].token_id);
        if (it == prof_row.end()) throw ValidationError(fmt::format("no feature profile for token {}", toks[i].token_id));
        for (std::size_t k = 0; k < inv.size(); ++k) {
          probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
              parse_double(prof.rows[it->second][k + 1], "profile");
        }
      }
      const auto features = pair.feature_list();
      for (auto kind : c.cfg.probe_kinds) {
        const auto& s = sel.at({seg, rep.name, std::string(to_string(kind))});
        const Eigen::MatrixXd& x = x_layers[s.best_layer];
        auto correlate = [&](const Eigen::MatrixXd& xs, const std::vector<std::size_t>& rows,
                             const std::string& what) -> std::optional<std::vector<FeatureCorrelation>> {
          try {
            return feature_correlations(select_rows(xs, rows), select_rows(probs, rows), inv, features, c.cfg.cca);
          } catch (const ValidationError& e) {
            log_warn("svcca: {} {} {} {}: {}", seg, rep.name, to_string(kind), what, e.what());
            return std::nullopt;
          }
        };
        std::vector<std::size_t> all(toks.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        const auto pooled = correlate(x, all, "baseline");
        for (auto acc : kAccentLabels) {
          std::vector<std::size_t> rows;
          for (std::size_t i = 0; i < toks.size(); ++i) {
            if (toks[i].accent == acc) rows.push_back(i);
          }
          const std::string acc_name(to_string(acc));
          std::optional<std::vector<FeatureCorrelation>> subset, baseline = pooled;
          if (!c.cfg.cca_pooled_baseline) baseline = correlate(x, rows, "baseline " + acc_name);
          if (s.selected.empty()) {
            log_warn("svcca: {} {} {}: probe selected no features", seg, rep.name, to_string(kind));
          } else if (rows.empty()) {
            log_warn("svcca: {} {} {}: no {} tokens", seg, rep.name, to_string(kind), acc_name);
          } else {
            subset = correlate(select_columns(x, s.selected), rows, acc_name);
          }
          std::optional<std::vector<RelativeWeight>> rw;
          if (subset && baseline) rw = relative_weights(*subset, *baseline);
          for (std::size_t f = 0; f < features.size(); ++f) {
            const double nan = std::nan("");
            corr.rows.push_back({seg, rep.name, std::string(to_string(kind)), acc_name, features[f],
                                 format_fixed(subset ? (*subset)[f].rho : nan, 6),
                                 format_fixed(baseline ? (*baseline)[f].rho : nan, 6)});
            weights.rows.push_back({seg, rep.name, std::string(to_string(kind)), acc_name, features[f],
                                    format_fixed(rw ? (*rw)[f].subset_weight : nan, 6),
                                    format_fixed(rw ? (*rw)[f].baseline_weight : nan, 6),
                                    format_fixed(rw ? (*rw)[f].ratio : nan, 6)});
          }
        }
      }
    }
  }
  const std::string mode = c.cfg.cca_pooled_baseline ? "pooled" : "per-accent";
  c.emit(c.stage_dir("svcca") / "correlations.tsv", corr, {"baseline: " + mode});
  c.emit(c.stage_dir("svcca") / "relative_weights.tsv", weights, {"baseline: " + mode});
}

std::string safe_name(const std::string& s) {
  std::string out;
  for (char ch : s) out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' ? ch : '_';
  return out;
}

void stage_distance(const Ctx& c) {
  const auto pairs = target_pairs(c.cfg);
  const auto tokens = tokens_of(c, CorpusId::Analysis);
  const auto ae_tokens = tokens_of(c, CorpusId::AE);
  const auto ie_tokens = tokens_of(c, CorpusId::IE);
  const auto sel = read_selection(c);
  const std::string probe(to_string(c.cfg.distance_probe));
  if (std::find(c.cfg.probe_kinds.begin(), c.cfg.probe_kinds.end(), c.cfg.distance_probe) == c.cfg.probe_kinds.end()) {
    throw ValidationError(fmt::format("distance.probe '{}' is not among probe.kinds", probe));
  }
  TsvTable proj;
  proj.columns = {"representation", "segment", "token_id", "accent", "pc1", "pc2"};
  for (const auto& rep : representations(c)) {
    const SegrepReader store(rep.stores.at(CorpusId::Analysis));
    const SegrepReader ae_store(rep.stores.at(CorpusId::AE));
    const SegrepReader ie_store(rep.stores.at(CorpusId::IE));
    std::vector<DistanceRecord> all;
    std::vector<std::string> layer_notes;
    for (const auto& pair : pairs) {
      const auto toks = filter_phone(tokens, pair.nonnative);
      const std::size_t layer = sel.at({pair.nonnative, rep.name, probe}).best_layer;
      const auto x = segment_matrices(store, toks)[layer];
      const auto ae_toks = filter_phone(ae_tokens, pair.native);
      const auto ie_toks = filter_phone(ie_tokens, pair.nonnative);
      if (ae_toks.empty() || ie_toks.empty()) {
        throw ValidationError(fmt::format("empty baseline bank for pair {}/{}", pair.native, pair.nonnative));
      }
      const BaselineBank ae{Variety::AE, pair.native, segment_matrices(ae_store, ae_toks)[layer]};
      const BaselineBank ie{Variety::IE, pair.nonnative, segment_matrices(ie_store, ie_toks)[layer]};
      auto recs = compute_distances(toks, x, ae.capped(c.cfg.distance_cap, c.cfg.seed),
                                    ie.capped(c.cfg.distance_cap, c.cfg.seed + 1), c.cfg.jobs);
      all.insert(all.end(), recs.begin(), recs.end());
      layer_notes.push_back(fmt::format("layer {}: {}", pair.nonnative, layer + static_cast<std::size_t>(store.manifest().layer_base)));

      if (x.rows() >= 3) {
        const auto p = project_2d(x);
        for (std::size_t i = 0; i < toks.size(); ++i) {
          proj.rows.push_back({rep.name, pair.nonnative, toks[i].token_id, std::string(to_string(*toks[i].accent)),
                               format_fixed(p(static_cast<Eigen::Index>(i), 0), 6),
                               format_fixed(p(static_cast<Eigen::Index>(i), 1), 6)});
        }
      }
    }
    c.emit(c.stage_dir("distance") / (safe_name(rep.name) + ".tsv"), distance_table(all), layer_notes);
  }
  c.emit(c.stage_dir("distance") / "projection.tsv", proj);
}

void stage_regress(const Ctx& c) {
  TsvTable coef, effects;
  coef.columns = {"representation", "segment", "accent", "term", "beta", "se", "z", "p"};
  effects.columns = {"Representation", "Segment", "Accent", "Effect", "beta", "p"};
  for (const auto& rep : representations(c)) {
    const auto records = distances_from_table(read_tsv(c.stage_dir("distance") / (safe_name(rep.name) + ".tsv")));
    for (const auto& seg : c.cfg.targets) {
      std::vector<DistanceRecord> recs;
      for (const auto& r : records) {
        if (r.segment == seg) recs.push_back(r);
      }
      standardize(recs);
      RegressionResult r;
      try {
        r = fit_multinomial(regression_design(recs));
      } catch (const NumericalError& e) {
        throw NumericalError(fmt::format("regression {} / {}: {}", seg, rep.name, e.what()));
      }
      for (std::size_t l = 0; l < r.levels.size(); ++l) {
        for (std::size_t j = 0; j < r.columns.size(); ++j) {
          const auto li = static_cast<Eigen::Index>(l), ji = static_cast<Eigen::Index>(j);
          coef.rows.push_back({rep.name, seg, std::string(to_string(static_cast<AccentLabel>(r.levels[l]))),
                               r.columns[j], format_exact(r.beta(li, ji)), format_exact(r.se(li, ji)),
                               format_exact(r.z(li, ji)), format_exact(r.p(li, ji))});
        }
      }
      for (auto row : regression_table(seg, r, c.cfg.alpha).rows) {
        row.insert(row.begin(), rep.name);
        effects.rows.push_back(std::move(row));
      }
    }
  }
  c.emit(c.stage_dir("regress") / "coefficients.tsv", coef);
  c.emit(c.stage_dir("regress") / "effects.tsv", effects, {fmt::format("interactions shown when p < {}", c.cfg.alpha)});
}

// Copies a table under a new name with fresh header comments, optionally
// keeping only some columns (renamed).
void reemit(const Ctx& c, const fs::path& from, const fs::path& to,
            const std::vector<std::pair<std::string, std::string>>& columns = {},
            const std::vector<std::string>& extra = {}) {
  const auto in = read_tsv(from);
  if (columns.empty()) {
    TsvTable t = in;
    c.emit(to, t, extra);
    return;
  }
  TsvTable t;
  std::vector<std::size_t> idx;
  for (const auto& [src, dst] : columns) {
    idx.push_back(in.column(src));
    t.columns.push_back(dst);
  }
  for (const auto& row : in.rows) {
    std::vector<std::string> r;
    for (auto i : idx) r.push_back(row[i]);
    t.rows.push_back(std::move(r));
  }
  c.emit(to, t, extra);
}

void stage_report(const Ctx& c) {
  const auto dir = c.stage_dir("report");
  reemit(c, c.stage_dir("ingest") / "distribution.tsv", dir / "token_distribution.tsv");
  reemit(c, c.stage_dir("phonet-train") / "feature_scores.tsv", dir / "phonet_feature_scores.tsv");

  // layer-wise scores with the best layer marked, and the best-layer summary
  const auto layers = read_tsv(c.stage_dir("probe") / "layers.tsv");
  const auto sel = read_tsv(c.stage_dir("probe") / "selection.tsv");
  std::map<std::tuple<std::string, std::string, std::string>, std::string> best_label;
  for (const auto& row : sel.rows) {
    best_label[{row[sel.column("segment")], row[sel.column("representation")], row[sel.column("probe")]}] =
        row[sel.column("layer_label")];
  }
  TsvTable scores;
  scores.columns = {"Segment", "Representation", "Probe", "Layer", "F1", "Best"};
  for (const auto& row : layers.rows) {
    const auto key = std::make_tuple(row[layers.column("segment")], row[layers.column("representation")],
                                     row[layers.column("probe")]);
    const auto& layer = row[layers.column("layer")];
    scores.rows.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), layer,
                           format_fixed(parse_double(row[layers.column("test_f1")], "test_f1"), 1),
                           best_label.at(key) == layer ? "*" : ""});
  }
  c.emit(dir / "layer_scores.tsv", scores);
  TsvTable best;
  best.columns = {"Segment", "Representation", "Probe", "Layer", "F1", "Selected"};
  for (const auto& row : sel.rows) {
    best.rows.push_back({row[sel.column("segment")], row[sel.column("representation")], row[sel.column("probe")],
                         row[sel.column("layer_label")],
                         format_fixed(parse_double(row[sel.column("test_f1")], "test_f1"), 1),
                         row[sel.column("n_selected")]});
  }
  c.emit(dir / "best_layers.tsv", best);

  reemit(c, c.stage_dir("regress") / "effects.tsv", dir / "regression.tsv", {},
         {"reference outcome: No/Negligible; reference position: Initial",
          fmt::format("interactions shown when p < {}", c.cfg.alpha)});

  // correlations: one row per accent plus the baseline row per feature
  const auto rho = read_tsv(c.stage_dir("svcca") / "correlations.tsv");
  TsvTable corr;
  corr.columns = {"Segment", "Feature", "Accent", "Representation", "Probe", "rho"};
  std::set<std::tuple<std::string, std::string, std::string, std::string>> baseline_done;
  for (const auto& row : rho.rows) {
    const auto& seg = row[rho.column("segment")];
    const auto& feat = row[rho.column("feature")];
    const auto& rep = row[rho.column("representation")];
    const auto& probe = row[rho.column("probe")];
    auto fmt3 = [](const std::string& v) { return v == "NA" ? v : format_fixed(parse_double(v, "rho"), 3); };
    corr.rows.push_back({seg, feat, row[rho.column("accent")], rep, probe, fmt3(row[rho.column("rho")])});
    if (c.cfg.cca_pooled_baseline && baseline_done.insert({seg, feat, rep, probe}).second) {
      corr.rows.push_back({seg, feat, "Baseline", rep, probe, fmt3(row[rho.column("baseline_rho")])});
    }
  }
  c.emit(dir / "feature_correlations.tsv", corr);

  const auto w = read_tsv(c.stage_dir("svcca") / "relative_weights.tsv");
  TsvTable weights;
  weights.columns = {"Segment", "Representation", "Probe", "Accent", "Feature", "Ratio"};
  std::set<std::tuple<std::string, std::string, std::string, std::string>> ref_done;
  for (const auto& row : w.rows) {
    const auto& seg = row[w.column("segment")];
    const auto& rep = row[w.column("representation")];
    const auto& probe = row[w.column("probe")];
    const auto& feat = row[w.column("feature")];
    const auto& ratio = row[w.column("ratio")];
    weights.rows.push_back({seg, rep, probe, row[w.column("accent")], feat,
                            ratio == "NA" ? ratio : format_fixed(parse_double(ratio, "ratio"), 4)});
    if (ref_done.insert({seg, rep, probe, feat}).second) {
      weights.rows.push_back({seg, rep, probe, "Baseline", feat, format_fixed(1.0, 4)});
    }
  }
  c.emit(dir / "relative_weights.tsv", weights);
  reemit(c, c.stage_dir("distance") / "projection.tsv", dir / "projection_2d.tsv", {},
         {"PCA of best-layer segment vectors"});
}

void append_run_log(const Ctx& c, const std::string& stage, bool skipped, double seconds) {
  json j = {{"stage", stage}, {"config_hash", c.cfg.hash}, {"seed", c.cfg.seed},
            {"skipped", skipped}, {"seconds", std::round(seconds * 1000.0) / 1000.0}};
  fs::create_directories(c.out);
  std::ofstream(c.out / "run_log.jsonl", std::ios::app) << j.dump() << "\n";
}

}  // namespace

bool run_stage(const RunConfig& cfg, const std::string& stage, const RunOptions& opts) {
  stage_dependencies(stage);  // validates the name
  const Ctx c{cfg, cfg.output_dir};
  if (!opts.force && stage_complete(c, stage)) {
    log_info("{}: up to date, skipping", stage);
    append_run_log(c, stage, true, 0.0);
    return false;
  }
  require_upstream(c, stage);
  const auto t0 = std::chrono::steady_clock::now();
  fs::remove(c.stamp(stage));
  fs::remove_all(c.stage_dir(stage));
  fs::create_directories(c.stage_dir(stage));
  if (stage == "ingest") stage_ingest(c);
  else if (stage == "mfcc") stage_mfcc(c);
  else if (stage == "phonet-train") stage_phonet_train(c);
  else if (stage == "phonet-score") stage_phonet_score(c);
  else if (stage == "probe") stage_probe(c);
  else if (stage == "svcca") stage_svcca(c);
  else if (stage == "distance") stage_distance(c);
  else if (stage == "regress") stage_regress(c);
  else if (stage == "report") stage_report(c);
  write_file_atomic(c.stamp(stage), cfg.hash + "\n");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  append_run_log(c, stage, false, secs);
  log_info("{}: done in {:.2f} s", stage, secs);
  return true;
}

void run_pipeline(const RunConfig& cfg, const RunOptions& opts, const std::string& until) {
  std::vector<std::string> order;
  collect_dependencies(until, order);
  order.push_back(until);
  // a forced rerun of an upstream stage invalidates everything after it
  bool dirty = opts.force;
  for (const auto& s : order) {
    RunOptions o;
    o.force = dirty;
    dirty = run_stage(cfg, s, o) || dirty;
  }
}

}  // namespace segprobe
