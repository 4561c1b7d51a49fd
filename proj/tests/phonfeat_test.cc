// tests/phonfeat_test.cc

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

#include <random>

#include <doctest.h>

#include "segprobe/error.h"
#include "segprobe/phonfeat.h"
#include "test_util.h"

using namespace segprobe;
using segprobe::testing::kResources;

TEST_CASE("shipped mapping has the full inventory and sane rows") {
  const auto m = load_feature_mapping(kResources / "feature_mapping.tsv");
  CHECK(m.inventory().size() == 26);
  CHECK(m.inventory().names.front() == "syllabic");
  CHECK(m.positive_features("ʈ") == std::vector<std::string>{"consonantal", "coronal"});
  // vowels are syllabic, stops are not continuant
  for (const auto& v : {"a", "i"}) CHECK(m.features(v)[m.inventory().index_of("syllabic")] == 1);
  CHECK(m.features("t")[m.inventory().index_of("continuant")] == 0);
  CHECK_THROWS_AS(m.features("ʘ"), ValidationError);
  CHECK_THROWS_AS(m.inventory().index_of("nope"), ValidationError);
}

TEST_CASE("segment pairs expose their feature lists") {
  const auto pairs = load_segment_pairs(kResources / "segment_pairs.tsv");
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[2].feature_list() == std::vector<std::string>{"anterior", "consonantal", "coronal"});
}

TEST_CASE("malformed mapping files are rejected") {
  testing::TempDir dir("mapping");
  write_file_atomic(dir / "m.tsv", "phone\ta\tb\nx\t1\t2\n");
  CHECK_THROWS_WITH_AS(load_feature_mapping(dir / "m.tsv"), doctest::Contains("expected 0 or 1"), ParseError);
  write_file_atomic(dir / "m.tsv", "phone\ta\nx\t1\nx\t0\n");
  CHECK_THROWS_WITH_AS(load_feature_mapping(dir / "m.tsv"), doctest::Contains("duplicate phone"), ParseError);
}

TEST_CASE("frame labels follow the phone under each frame center") {
  const auto m = load_feature_mapping(kResources / "feature_mapping.tsv");
  UtteranceAlignment a;
  a.utterance_id = "u";
  a.phone_tier = {{"sil", 0.0, 0.1}, {"t", 0.1, 0.2}, {"a", 0.2, 0.3}};
  const auto y = label_frames(a, m, {0.05, 0.15, 0.25, 0.35});
  CHECK(y.row(0).sum() == 0);
  CHECK(y(1, static_cast<Eigen::Index>(m.inventory().index_of("anterior"))) == 1);
  CHECK(y(2, static_cast<Eigen::Index>(m.inventory().index_of("syllabic"))) == 1);
  CHECK(y.row(3).sum() == 0);
  a.phone_tier.push_back({"ʘ", 0.3, 0.4});
  CHECK_THROWS_WITH_AS(label_frames(a, m, {0.05}), doctest::Contains("[ʘ]"), ValidationError);
}

TEST_CASE("context stacking repeats edge frames") {
  Eigen::MatrixXd f(3, 1);
  f << 1, 2, 3;
  const auto s = stack_context(f, 2);
  Eigen::MatrixXd want(3, 5);
  want << 1, 1, 1, 2, 3,  //
      1, 1, 2, 3, 3,      //
      1, 2, 3, 3, 3;
  CHECK(s == want);
}

TEST_CASE("segment profiles average the covered frames") {
  Eigen::MatrixXd p(4, 1);
  p << 0.1, 0.3, 0.5, 0.9;
  const std::vector<double> t{0.005, 0.015, 0.025, 0.035};
  CHECK(average_covered_rows(p, t, 0.01, 0.03)[0] == doctest::Approx(0.4));
  CHECK_THROWS_AS(average_covered_rows(p, t, 0.016, 0.024), ValidationError);
}

TEST_CASE("feature F1 uses the usual counts and 100 for empty classes") {
  FeatureInventory inv{{"f", "g"}};
  Eigen::MatrixXd probs(4, 2), labels(4, 2);
  probs << 0.9, 0.1, 0.8, 0.2, 0.2, 0.3, 0.6, 0.4;
  labels << 1, 0, 1, 0, 1, 0, 0, 0;
  const auto s = evaluate_predictions(probs, labels, inv);
  // f: tp 2, fp 1, fn 1 -> 2*2 / (4 + 2)
  CHECK(s[0].f1 == doctest::Approx(100.0 * 4.0 / 6.0));
  CHECK(s[0].accuracy == doctest::Approx(50.0));
  CHECK(s[1].f1 == 100.0);
  CHECK(s[1].accuracy == 100.0);
}

TEST_CASE("training reduces loss, is seed-deterministic, and the model round-trips") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  std::vector<FrameMatrix> in(4);
  std::vector<Eigen::MatrixXd> lab(4);
  for (int u = 0; u < 4; ++u) {
    in[u].data.resize(60, 3);
    lab[u].resize(60, 2);
    for (int i = 0; i < 60; ++i) {
      for (int j = 0; j < 3; ++j) in[u].data(i, j) = g(rng);
      lab[u](i, 0) = in[u].data(i, 0) > 0;
      lab[u](i, 1) = in[u].data(i, 1) + in[u].data(i, 2) > 0;
      in[u].frame_times.push_back(0.01 * i);
    }
  }
  FeatureModelConfig cfg;
  cfg.context = 1;
  cfg.hidden = 8;
  cfg.max_epochs = 40;
  cfg.learning_rate = 1e-2;
  TrainingReport rep;
  const auto a = train_feature_model(in, lab, cfg, &rep);
  CHECK(rep.train_loss.back() < rep.train_loss.front());
  const auto b = train_feature_model(in, lab, cfg);
  CHECK(a.w_hidden == b.w_hidden);

  testing::TempDir dir("model");
  a.save(dir / "m.bin");
  const auto c = FeatureModel::load(dir / "m.bin");
  // weights are stored as float32: predictions agree to float precision and
  // a second save is byte-identical
  CHECK((c.predict(in[0]) - a.predict(in[0])).cwiseAbs().maxCoeff() < 1e-5);
  c.save(dir / "m2.bin");
  CHECK(read_file(dir / "m2.bin") == read_file(dir / "m.bin"));
  auto bytes = read_file(dir / "m.bin");
  write_file_atomic(dir / "t.bin", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(FeatureModel::load(dir / "t.bin"), ParseError);
  CHECK_THROWS_AS(a.predict(FrameMatrix{Eigen::MatrixXd::Zero(5, 4), {}}), ValidationError);
}

TEST_CASE("labelled frames carry exactly the mapped features") {
  const auto m = load_feature_mapping(kResources / "feature_mapping.tsv");
  UtteranceAlignment a;
  a.phone_tier = {{"ʋ", 0.0, 0.1}, {"ʈ", 0.1, 0.2}};
  const auto y = label_frames(a, m, {0.05, 0.15});
  auto on = [&](Eigen::Index r) {
    std::set<std::string> s;
    for (std::size_t j = 0; j < m.inventory().size(); ++j)
      if (y(r, static_cast<Eigen::Index>(j)) == 1) s.insert(m.inventory().names[j]);
    return s;
  };
  CHECK(on(0) == std::set<std::string>{"consonantal", "sonorant", "continuant", "approximant", "voice", "labial",
                                       "labiodental"});
  CHECK(on(1) == std::set<std::string>{"consonantal", "coronal"});
}

TEST_CASE("a feature that is always on is predicted on") {
  std::vector<FrameMatrix> in(2);
  std::vector<Eigen::MatrixXd> lab(2);
  for (int u = 0; u < 2; ++u) {
    in[u].data = Eigen::MatrixXd::Random(50, 2);
    lab[u] = Eigen::MatrixXd::Ones(50, 1);
    lab[u].bottomRows(25).setOnes();
  }
  FeatureModelConfig cfg;
  cfg.context = 0;
  cfg.hidden = 4;
  cfg.max_epochs = 5;
  TrainingReport rep;
  const auto model = train_feature_model(in, lab, cfg, &rep);
  CHECK(!rep.warnings.empty());
  CHECK(model.predict(in[0]).minCoeff() > 1.0 - 1e-3);
}

TEST_CASE("segment profile arithmetic") {
  Eigen::MatrixXd p(3, 1);
  p << 0.2, 0.8, 0.4;
  const std::vector<double> t{0.01, 0.03, 0.05};
  CHECK(average_covered_rows(p, t, 0.0, 0.04)[0] == doctest::Approx(0.5));
  CHECK(average_covered_rows(p, t, 0.045, 0.06)[0] == 0.4);
}

TEST_CASE("frame metrics against a hand confusion matrix") {
  FeatureInventory inv{{"f"}};
  // TP 2, FP 1, FN 1, TN 6
  Eigen::MatrixXd probs(10, 1), labels(10, 1);
  probs << 1, 1, 1, 0, 0, 0, 0, 0, 0, 0;
  labels << 1, 1, 0, 1, 0, 0, 0, 0, 0, 0;
  const auto s = evaluate_predictions(probs, labels, inv);
  CHECK(s[0].accuracy == doctest::Approx(80.0));
  CHECK(s[0].f1 == doctest::Approx(66.67).epsilon(1e-4));
  const auto perfect = evaluate_predictions(labels, labels, inv);
  CHECK(perfect[0].accuracy == 100.0);
  CHECK(perfect[0].f1 == 100.0);
  const Eigen::MatrixXd complement = 1.0 - labels.array();
  CHECK(evaluate_predictions(complement, labels, inv)[0].accuracy == 0.0);
}
