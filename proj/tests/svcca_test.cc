// tests/svcca_test.cc

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
#include "segprobe/svcca.h"

using namespace segprobe;

TEST_CASE("kept rank follows cumulative explained variance") {
  const Eigen::Vector3d s(3, 2, 1);  // squares 9, 4, 1 of 14
  CHECK(kept_rank(s, 0.99) == 3);
  CHECK(kept_rank(s, 0.9) == 2);  // 13/14 >= 0.9
  CHECK(kept_rank(s, 0.5) == 1);
  CHECK(kept_rank(s, 1.0) == 3);
}

TEST_CASE("exact linear relation gives rho = 1, independent noise gives small rho") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  Eigen::MatrixXd x(300, 4);
  for (auto& v : x.reshaped()) v = g(rng);
  Eigen::VectorXd y = 2.0 * x.col(0) - x.col(3) + Eigen::VectorXd::Constant(300, 7.0);
  CHECK(svcca_corr(x, y) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(svcca_corr(x, 5.0 * y) == doctest::Approx(1.0).epsilon(1e-10));
  Eigen::VectorXd z(300);
  for (auto& v : z) v = g(rng);
  const double r = svcca_corr(x, z);
  CHECK(r >= 0.0);
  CHECK(r < 0.3);
}

TEST_CASE("single column reduces to the absolute Pearson correlation") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  Eigen::MatrixXd x(100, 1);
  Eigen::VectorXd y(100);
  for (int i = 0; i < 100; ++i) x(i, 0) = g(rng), y[i] = -0.5 * x(i, 0) + g(rng);
  const Eigen::VectorXd a = x.col(0).array() - x.col(0).mean(), b = y.array() - y.mean();
  CHECK(svcca_corr(x, y) == doctest::Approx(std::abs(a.dot(b)) / (a.norm() * b.norm())).epsilon(1e-12));
}

TEST_CASE("degenerate inputs are rejected") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(20, 3);
  CHECK_THROWS_WITH_AS(svcca_corr(x, Eigen::VectorXd::Constant(20, 0.4)), doctest::Contains("constant"), ValidationError);
  CHECK_THROWS_WITH_AS(svcca_corr(Eigen::MatrixXd::Ones(20, 3), Eigen::VectorXd::LinSpaced(20, 0, 1)), doctest::Contains("zero variance"), ValidationError);
  CHECK_THROWS_AS(svcca_corr(x, Eigen::VectorXd::LinSpaced(19, 0, 1)), ValidationError);
  CcaConfig bad;
  bad.variance_kept = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("feature correlations name the failing feature") {
  FeatureInventory inv{{"a", "b"}};
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(30, 3), p(30, 2);
  p.col(0) = Eigen::VectorXd::LinSpaced(30, 0.1, 0.9);
  p.col(1).setConstant(0.5);
  CHECK(feature_correlations(x, p, inv, {"a"}).size() == 1);
  CHECK_THROWS_WITH(feature_correlations(x, p, inv, {"a", "b"}), doctest::Contains("b"));
}

TEST_CASE("softmax weights and relative weights") {
  const auto w = softmax_weights({0.2, 0.5, 0.9});
  CHECK(w[0] + w[1] + w[2] == doctest::Approx(1.0));
  CHECK(w[2] / w[0] == doctest::Approx(std::exp(0.7)));
  const auto shifted = softmax_weights({10.2, 10.5, 10.9});
  CHECK(shifted[1] == doctest::Approx(w[1]));

  const std::vector<FeatureCorrelation> base{{"x", 0.5}, {"y", 0.5}}, sub{{"x", 0.9}, {"y", 0.1}};
  const auto r = relative_weights(sub, base);
  CHECK(r[0].ratio == doctest::Approx(2.0 * std::exp(0.9) / (std::exp(0.9) + std::exp(0.1))));
  CHECK(r[0].ratio > 1.0);
  CHECK(r[1].ratio < 1.0);
  CHECK(relative_weights(base, base)[0].ratio == doctest::Approx(1.0));
  CHECK_THROWS_AS(relative_weights(sub, {{"y", 0.5}, {"x", 0.5}}), ValidationError);
}

TEST_CASE("orthogonal target gives zero correlation") {
  Eigen::MatrixXd x(6, 2);
  x << 1, 0, -1, 0, 0, 1, 0, -1, 0, 0, 0, 0;
  Eigen::VectorXd y(6);
  y << 0, 0, 0, 0, 1, -1;
  CHECK(std::abs(svcca_corr(x, y)) < 1e-10);
}

TEST_CASE("too few observations for the kept rank") {
  // 4 centered rows span at most 3 directions, so any y would fit exactly
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 6);
  CHECK_THROWS_AS(svcca_corr(x, Eigen::VectorXd::LinSpaced(4, 0, 1)), ValidationError);
}

TEST_CASE("relative weights hand example and shift invariance") {
  const std::vector<FeatureCorrelation> sub{{"a", 1.0}, {"b", 0.0}}, base{{"a", 0.5}, {"b", 0.5}};
  const auto r = relative_weights(sub, base);
  CHECK(r[0].subset_weight == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(r[0].ratio == doctest::Approx(1.4622).epsilon(1e-4));
  CHECK(r[1].ratio == doctest::Approx(0.5378).epsilon(1e-4));
  const std::vector<FeatureCorrelation> shifted{{"a", 1.3}, {"b", 0.3}};
  const auto s = relative_weights(shifted, base);
  CHECK(s[0].ratio == doctest::Approx(r[0].ratio));
}
