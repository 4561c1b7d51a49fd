// include/segprobe/svcca.h

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

// Singular-vector canonical correlation between a representation subset and
// one phonological-feature probability column, and the softmax-normalized
// relative weights derived from those correlations.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "segprobe/phonfeat.h"

namespace segprobe {

struct CcaConfig {
  double variance_kept = 0.99;
  /// Whitening eigenvalues are floored at ridge * largest eigenvalue.
  double ridge = 1e-8;

  void validate() const;
};

/// Number of leading singular values whose squared sum reaches
/// variance_kept of the total.
Eigen::Index kept_rank(const Eigen::VectorXd& singular_values, double variance_kept);

/// First canonical correlation between the SVD-truncated, centered x and
/// the centered column y, clipped to [0, 1].
double svcca_corr(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const CcaConfig& cfg = {});

struct FeatureCorrelation {
  std::string feature;
  double rho = 0.0;
};

/// One correlation per named feature; `probs` columns follow `inventory`.
std::vector<FeatureCorrelation> feature_correlations(const Eigen::MatrixXd& x, const Eigen::MatrixXd& probs,
                                                     const FeatureInventory& inventory,
                                                     const std::vector<std::string>& features,
                                                     const CcaConfig& cfg = {});

std::vector<double> softmax_weights(const std::vector<double>& values);

struct RelativeWeight {
  std::string feature;
  double subset_weight = 0.0;
  double baseline_weight = 0.0;
  double ratio = 1.0;
};

/// Softmax over each table separately, then subset / baseline per feature.
/// Both inputs must list the same features in the same order.
std::vector<RelativeWeight> relative_weights(const std::vector<FeatureCorrelation>& subset,
                                             const std::vector<FeatureCorrelation>& baseline);

}  // namespace segprobe
