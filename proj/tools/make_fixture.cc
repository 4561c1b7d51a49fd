// tools/make_fixture.cc

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

// make_fixture: writes the small synthetic corpus used by the pipeline tests.
//
// Audio is a sum of phone-specific partials; target segments in the analysis
// corpus blend the native and non-native renderings in proportion to the
// speaker's accent level. A synthetic four-layer representation carries the
// same blend with layer-dependent strength, so probes, distances and the
// regression all have something to find.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <fmt/format.h>

#include "segprobe/corpus.h"
#include "segprobe/pipeline.h"
#include "segprobe/repstore.h"
#include "segprobe/table.h"
#include "segprobe/wav.h"

namespace fs = std::filesystem;
using namespace segprobe;

namespace {

constexpr int kSampleRate = 8000;
constexpr double kRepHop = 0.020;
constexpr int kRepLayers = 4;
constexpr int kRepDim = 8;

struct Pair {
  std::string native, nonnative;
};
const std::vector<Pair> kPairs = {{"v", "ʋ"}, {"ɹ", "ɾ"}, {"t", "ʈ"}};
const std::vector<std::string> kVowels = {"a", "i", "ə"};
const std::vector<std::string> kConsonants = {"n", "m", "s", "k", "l", "d", "p"};

// Blend weight toward the non-native rendering, by accent level.
double accent_blend(AccentLabel a) {
  switch (a) {
    case AccentLabel::NoNegligible: return 0.35;
    case AccentLabel::Mild: return 0.5;
    case AccentLabel::Strong: return 0.65;
  }
  return 0.0;
}

std::uint64_t phone_hash(const std::string& p) { return std::stoull(fnv1a_hex(p), nullptr, 16); }

struct Voice {
  std::array<double, 3> freq;
  double noise;
};

Voice voice_of(const std::string& phone) {
  std::mt19937_64 rng(phone_hash(phone));
  std::uniform_real_distribution<double> f(150.0, 3600.0), n(0.02, 0.4);
  return {{f(rng), f(rng), f(rng)}, n(rng)};
}

Eigen::VectorXd prototype(const std::string& phone, int layer) {
  std::mt19937_64 rng(phone_hash(phone) ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(layer + 1)));
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd v(kRepDim);
  for (auto& x : v) x = 2.0 * g(rng);
  return v;
}

// Per-layer (signal strength, noise SD); the second layer is the clearest.
constexpr std::array<std::pair<double, double>, kRepLayers> kLayerShape = {
    {{0.3, 1.2}, {1.0, 0.7}, {0.8, 0.9}, {0.5, 1.1}}};

struct PlannedPhone {
  std::string label;  // empty for silence
  double dur;
  // rendering: blend of `a` and `b` (b weight `mix`)
  std::string a, b;
  double mix = 0.0;
};

struct PlannedWord {
  std::string label;
  std::vector<PlannedPhone> phones;
};

struct Rendered {
  UtteranceAlignment align;
  PcmAudio audio;
  std::vector<FloatMatrix> layers;
};

Rendered render(const std::string& id, const std::vector<PlannedWord>& words, std::mt19937_64& rng) {
  Rendered r;
  r.align.utterance_id = id;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  struct Span {
    double t0, t1;
    const PlannedPhone* p;
  };
  std::vector<Span> spans;
  const PlannedPhone silence{"", 0.05, "", "", 0.0};
  double t = 0.0;
  auto add_silence = [&] {
    r.align.phone_tier.push_back({"", t, t + silence.dur});
    r.align.word_tier.push_back({"", t, t + silence.dur});
    spans.push_back({t, t + silence.dur, &silence});
    t += silence.dur;
  };
  add_silence();
  for (const auto& w : words) {
    const double w0 = t;
    for (const auto& p : w.phones) {
      r.align.phone_tier.push_back({p.label, t, t + p.dur});
      spans.push_back({t, t + p.dur, &p});
      t += p.dur;
    }
    r.align.word_tier.push_back({w.label, w0, t});
  }
  add_silence();
  r.align.xmin = 0.0;
  r.align.xmax = t;

  // audio
  const auto n = static_cast<std::size_t>(std::floor(t * kSampleRate));
  r.audio.sample_rate = kSampleRate;
  r.audio.samples.assign(n, 0.0);
  for (const auto& s : spans) {
    const auto i0 = static_cast<std::size_t>(s.t0 * kSampleRate);
    const auto i1 = std::min(n, static_cast<std::size_t>(s.t1 * kSampleRate));
    if (s.p->label.empty()) {
      for (std::size_t i = i0; i < i1; ++i) r.audio.samples[i] = 0.003 * g(rng);
      continue;
    }
    const Voice va = voice_of(s.p->a), vb = voice_of(s.p->b.empty() ? s.p->a : s.p->b);
    const double phase = 2 * M_PI * u(rng);
    for (std::size_t i = i0; i < i1; ++i) {
      const double tt = static_cast<double>(i) / kSampleRate;
      double x = 0.0;
      for (int k = 0; k < 3; ++k) {
        x += (1 - s.p->mix) * std::sin(2 * M_PI * va.freq[k] * tt + phase) / 3.0;
        x += s.p->mix * std::sin(2 * M_PI * vb.freq[k] * tt + phase) / 3.0;
      }
      x += ((1 - s.p->mix) * va.noise + s.p->mix * vb.noise + 0.35) * g(rng);
      const double edge = std::min({1.0, (tt - s.t0) / 0.01, (s.t1 - tt) / 0.01});
      r.audio.samples[i] = 0.3 * std::max(0.0, edge) * x;
    }
  }

  // representation frames, centered at (k + 0.5) * hop
  const auto frames = static_cast<Eigen::Index>(std::floor(t / kRepHop));
  for (int l = 0; l < kRepLayers; ++l) {
    FloatMatrix m(frames, kRepDim);
    const auto [strength, sd] = kLayerShape[static_cast<std::size_t>(l)];
    std::size_t si = 0;
    for (Eigen::Index k = 0; k < frames; ++k) {
      const double c = (static_cast<double>(k) + 0.5) * kRepHop;
      while (si + 1 < spans.size() && c >= spans[si].t1) ++si;
      const auto& p = *spans[si].p;
      Eigen::VectorXd v = Eigen::VectorXd::Zero(kRepDim);
      if (!p.label.empty()) {
        v = strength * ((1 - p.mix) * prototype(p.a, l) + (p.b.empty() ? Eigen::VectorXd::Zero(kRepDim)
                                                                           : Eigen::VectorXd(p.mix * prototype(p.b, l))));
      }
      for (Eigen::Index d = 0; d < kRepDim; ++d) m(k, d) = static_cast<float>(v[d] + sd * g(rng));
    }
    r.layers.push_back(std::move(m));
  }
  return r;
}

enum class Corpus { Analysis, AE, IE };

PlannedWord make_word(const std::string& target, const std::string& a, const std::string& b, double mix,
                      WordPosition pos, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> vi(0, kVowels.size() - 1), ci(0, kConsonants.size() - 1);
  std::uniform_real_distribution<double> dur(0.045, 0.07);
  PlannedPhone tp{target, dur(rng), a, b, mix};
  auto filler = [&](bool vowel) {
    const auto& ph = vowel ? kVowels[vi(rng)] : kConsonants[ci(rng)];
    return PlannedPhone{ph, dur(rng), ph, "", 0.0};
  };
  PlannedWord w;
  switch (pos) {
    case WordPosition::Initial: w.phones = {tp, filler(true), filler(false)}; break;
    case WordPosition::Medial: w.phones = {filler(true), tp, filler(true)}; break;
    case WordPosition::Final: w.phones = {filler(false), filler(true), tp}; break;
  }
  for (const auto& p : w.phones) w.label += p.label;
  return w;
}

void write_corpus(const fs::path& root, Corpus which, int n_utts, std::mt19937_64& rng,
                  std::map<std::string, std::vector<Rendered>>& reps, TsvTable* ratings) {
  const std::string name = which == Corpus::Analysis ? "analysis" : which == Corpus::AE ? "AE" : "IE";
  fs::create_directories(root / name / "textgrids");
  fs::create_directories(root / name / "audio");
  std::uniform_real_distribution<double> jitter(-0.35, 0.35);
  std::uniform_int_distribution<int> posd(0, 2), coin(0, 1);
  for (int u = 0; u < n_utts; ++u) {
    const std::string id = fmt::format("{}{:03d}", which == Corpus::Analysis ? "spk" : name, u);
    const auto accent = static_cast<AccentLabel>(u % 3);
    std::vector<PlannedWord> words;
    for (int rep = 0; rep < 2; ++rep) {
      for (const auto& pair : kPairs) {
        const auto pos = static_cast<WordPosition>(posd(rng));
        if (which == Corpus::Analysis) {
          const double mix = std::clamp(accent_blend(accent) + jitter(rng), 0.0, 1.0);
          words.push_back(make_word(pair.nonnative, pair.native, pair.nonnative, mix, pos, rng));
        } else {
          const auto& ph = which == Corpus::AE ? pair.native : pair.nonnative;
          words.push_back(make_word(ph, ph, "", 0.0, pos, rng));
        }
      }
    }
    std::shuffle(words.begin(), words.end(), rng);
    auto r = render(id, words, rng);
    write_textgrid(root / name / "textgrids" / (id + ".TextGrid"), r.align);
    write_wav(root / name / "audio" / (id + ".wav"), r.audio);
    if (ratings != nullptr) {
      // three raters; the merged label is the minimum code
      const int code = static_cast<int>(accent) + 1 + (accent == AccentLabel::Strong ? coin(rng) : 0);
      std::uniform_int_distribution<int> above(code, 4);
      ratings->rows.push_back({id, std::to_string(code), std::to_string(above(rng)), std::to_string(above(rng))});
    }
    reps[name].push_back(std::move(r));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Write the synthetic fixture corpus"};
  std::string out;
  std::uint64_t seed = 20240601;
  int n_analysis = 48, n_baseline = 12;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--seed", seed, "Generator seed");
  app.add_option("--analysis-utterances", n_analysis, "Analysis corpus size");
  app.add_option("--baseline-utterances", n_baseline, "Size of each baseline corpus");
  CLI11_PARSE(app, argc, argv);

  const fs::path root(out);
  std::mt19937_64 rng(seed);
  std::map<std::string, std::vector<Rendered>> reps;
  TsvTable ratings;
  ratings.comments = {"accent ratings: 1 no/negligible, 2 mild, 3 strong, 4 very strong"};
  ratings.columns = {"utterance_id", "rater1", "rater2", "rater3"};
  write_corpus(root, Corpus::Analysis, n_analysis, rng, reps, &ratings);
  write_corpus(root, Corpus::AE, n_baseline, rng, reps, nullptr);
  write_corpus(root, Corpus::IE, n_baseline, rng, reps, nullptr);
  write_tsv(root / "analysis" / "ratings.tsv", ratings);

  for (const auto& [name, rendered] : reps) {
    const fs::path dir = root / "synthconf" / name;
    fs::remove_all(dir);
    SegrepWriter w(dir, "synthconf", kRepLayers, kRepDim, FrameClock::centered(kRepHop), 1);
    for (const auto& r : rendered) w.add(r.align.utterance_id, r.layers);
    w.finish();
  }
  std::cout << "wrote fixture corpus to " << root.string() << "\n";
  return 0;
}
