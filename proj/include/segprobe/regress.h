// include/segprobe/regress.h

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

#pragma once

// Distances from analysis tokens to AE/IE baseline banks, and the
// multinomial logistic regression of accent ratings on those distances with
// word-position interactions.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "segprobe/corpus.h"
#include "segprobe/table.h"

namespace segprobe {

enum class Variety { AE, IE };
std::string_view to_string(Variety v);

struct BaselineBank {
  Variety variety = Variety::AE;
  std::string segment;
  Eigen::MatrixXd vectors;  // one row per baseline token

  /// At most `cap` rows, drawn uniformly without replacement (0 = no cap).
  BaselineBank capped(std::size_t cap, std::uint64_t seed) const;
};

/// Mean Euclidean distance from v to every row of the bank.
double average_distance(const Eigen::VectorXd& v, const BaselineBank& bank);
double average_distance(const Eigen::VectorXd& v, const BaselineBank& bank, std::size_t cap,
                        std::uint64_t seed);

struct DistanceRecord {
  std::string token_id;
  std::string segment;
  WordPosition position = WordPosition::Initial;
  AccentLabel accent = AccentLabel::NoNegligible;
  double d_ae = 0.0, d_ie = 0.0;  // raw
  double z_ae = 0.0, z_ie = 0.0;  // standardized over the records passed to standardize()
};

/// `vectors` rows align with `tokens`; every token must carry an accent.
std::vector<DistanceRecord> compute_distances(const std::vector<PhoneToken>& tokens,
                                              const Eigen::MatrixXd& vectors, const BaselineBank& ae,
                                              const BaselineBank& ie, int jobs = 1);

/// z-scores d_ae/d_ie over the given records (population SD).
void standardize(std::vector<DistanceRecord>& records);

TsvTable distance_table(const std::vector<DistanceRecord>& records);
std::vector<DistanceRecord> distances_from_table(const TsvTable& t);

struct Design {
  std::vector<std::string> columns;  // first is the intercept
  Eigen::MatrixXd x;
  std::vector<int> y;  // 0 = reference outcome
};

/// Intercept, d_AE, d_IE, Medial, Final and the four distance x position
/// interactions, on the standardized distances.
Design regression_design(const std::vector<DistanceRecord>& records);

struct MultinomialOptions {
  double tol = 1e-8;          // on the max-abs mean gradient
  int max_iter = 100;
  double separation_bound = 50.0;
  double certainty_eps = 1e-10;  // fitted probability above 1 - eps signals separation
};

struct RegressionResult {
  std::vector<std::string> columns;
  std::vector<int> levels;  // outcome levels with a coefficient row (reference excluded)
  Eigen::MatrixXd beta, se, z, p;  // levels x columns
  double log_likelihood = 0.0;
  std::size_t n = 0;
  int iterations = 0;
};

/// Probabilities for outcomes {0, levels...}; rows sum to 1.
Eigen::MatrixXd multinomial_probs(const Eigen::MatrixXd& x, const Eigen::MatrixXd& beta);
double multinomial_loglik(const Eigen::MatrixXd& x, const std::vector<int>& y, const std::vector<int>& levels,
                          const Eigen::MatrixXd& beta);
/// Gradient of the log-likelihood, shaped like beta.
Eigen::MatrixXd multinomial_gradient(const Eigen::MatrixXd& x, const std::vector<int>& y,
                                     const std::vector<int>& levels, const Eigen::MatrixXd& beta);

/// Newton-Raphson maximum likelihood with Wald statistics. Outcome 0 is the
/// reference and must be present; absent non-reference levels are dropped.
RegressionResult fit_multinomial(const Design& d, const MultinomialOptions& opts = {});

std::string effect_label(const std::string& column);

/// Report rows: main effects always, interactions only when p < alpha.
TsvTable regression_table(const std::string& segment, const RegressionResult& r, double alpha = 0.05);

/// PCA to two components on the pooled, centered rows. Component signs are
/// fixed so the largest-magnitude loading is positive.
Eigen::MatrixXd project_2d(const Eigen::MatrixXd& vectors);

}  // namespace segprobe
