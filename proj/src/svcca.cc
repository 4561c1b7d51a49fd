// src/svcca.cc

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

#include "segprobe/svcca.h"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "segprobe/error.h"

namespace segprobe {

void CcaConfig::validate() const {
  if (!(variance_kept > 0.0 && variance_kept <= 1.0)) {
    throw ValidationError(fmt::format("variance_kept must be in (0, 1], got {}", variance_kept));
  }
  if (!(ridge >= 0.0)) throw ValidationError("ridge must be non-negative");
}

Eigen::Index kept_rank(const Eigen::VectorXd& s, double variance_kept) {
  const double total = s.squaredNorm();
  if (!(total > 0.0)) return 0;
  double acc = 0.0;
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    acc += s[k] * s[k];
    // relative slack so that variance_kept = 1 is not lost to rounding
    if (acc >= variance_kept * total * (1.0 - 1e-12)) return k + 1;
  }
  return s.size();
}

double svcca_corr(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const CcaConfig& cfg) {
  cfg.validate();
  if (x.rows() != y.size()) {
    throw ValidationError(fmt::format("svcca: {} rows in X but {} values in y", x.rows(), y.size()));
  }
  if (!x.allFinite() || !y.allFinite()) throw ValidationError("svcca: non-finite input");
  const Eigen::VectorXd yc = y.array() - y.mean();
  const double y_norm = yc.norm();
  const double y_scale = y.cwiseAbs().maxCoeff() + 1.0;
  if (!(y_norm > 1e-12 * y_scale * std::sqrt(static_cast<double>(y.size())))) {
    throw ValidationError("svcca: constant feature probabilities");
  }
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(xc, Eigen::ComputeThinU);
  const Eigen::VectorXd& s = svd.singularValues();
  const Eigen::Index k = kept_rank(s, cfg.variance_kept);
  if (k == 0) throw ValidationError("svcca: representation subset has zero variance");
  // centering costs one degree of freedom; with k = n - 1 every y fits exactly
  if (x.rows() - 1 <= k) {
    throw ValidationError(fmt::format("svcca: {} tokens leave no residual degrees of freedom at kept rank {}",
                                      x.rows(), k));
  }
  // In the basis of the kept left singular vectors the covariance of X is
  // diag(s^2); whitening with floored eigenvalues shrinks only directions
  // far below the leading one.
  const double floor = cfg.ridge * s[0] * s[0];
  const Eigen::VectorXd proj = svd.matrixU().leftCols(k).transpose() * yc;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double ev = s[i] * s[i];
    acc += proj[i] * proj[i] * ev / std::max(ev, floor);
  }
  return std::clamp(std::sqrt(acc) / y_norm, 0.0, 1.0);
}

std::vector<FeatureCorrelation> feature_correlations(const Eigen::MatrixXd& x, const Eigen::MatrixXd& probs,
                                                     const FeatureInventory& inventory,
                                                     const std::vector<std::string>& features,
                                                     const CcaConfig& cfg) {
  if (probs.cols() != static_cast<Eigen::Index>(inventory.size())) {
    throw ValidationError(fmt::format("feature_correlations: {} probability columns for {} features",
                                      probs.cols(), inventory.size()));
  }
  std::vector<FeatureCorrelation> out;
  for (const auto& f : features) {
    const auto col = static_cast<Eigen::Index>(inventory.index_of(f));
    try {
      out.push_back({f, svcca_corr(x, probs.col(col), cfg)});
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("feature '{}': {}", f, e.what()));
    }
  }
  return out;
}

std::vector<double> softmax_weights(const std::vector<double>& values) {
  if (values.empty()) return {};
  const double m = *std::max_element(values.begin(), values.end());
  std::vector<double> out(values.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) sum += out[i] = std::exp(values[i] - m);
  for (double& v : out) v /= sum;
  return out;
}

std::vector<RelativeWeight> relative_weights(const std::vector<FeatureCorrelation>& subset,
                                             const std::vector<FeatureCorrelation>& baseline) {
  if (subset.size() != baseline.size()) throw ValidationError("relative_weights: feature-list mismatch");
  std::vector<double> a, b;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (subset[i].feature != baseline[i].feature) {
      throw ValidationError(fmt::format("relative_weights: feature-list mismatch ('{}' vs '{}')",
                                        subset[i].feature, baseline[i].feature));
    }
    a.push_back(subset[i].rho);
    b.push_back(baseline[i].rho);
  }
  const auto wa = softmax_weights(a);
  const auto wb = softmax_weights(b);
  std::vector<RelativeWeight> out;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    out.push_back({subset[i].feature, wa[i], wb[i], wa[i] / wb[i]});
  }
  return out;
}

}  // namespace segprobe
