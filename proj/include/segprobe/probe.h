// include/segprobe/probe.h

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

// L1-regularized accent probes (multinomial logistic regression and
// one-vs-rest squared-hinge linear SVM), weighted-F1 scoring, stratified
// splitting, and the per-layer sweep.

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "segprobe/table.h"

namespace segprobe {

enum class ProbeKind { LogReg, LinearSVM };
std::string_view to_string(ProbeKind k);
ProbeKind parse_probe_kind(std::string_view s);

struct SolverOptions {
  int n_classes = 3;
  double tol = 1e-6;  // subgradient (KKT) residual at which a fit stops
  int max_iter = 5000;  // outer proximal Newton passes
};

struct ProbeModel {
  ProbeKind kind = ProbeKind::LogReg;
  Eigen::MatrixXd w;  // n_classes x dim
  Eigen::VectorXd b;  // n_classes; -inf for classes absent from training
  double lambda = 0.0;

  Eigen::MatrixXd scores(const Eigen::MatrixXd& x) const;
  std::vector<int> predict(const Eigen::MatrixXd& x) const;
};

struct FitTrace {
  std::vector<double> objective;  // after each sweep
  int sweeps = 0;
  bool converged = false;
  double kkt = 0.0;
};

/// Mean multinomial negative log-likelihood (the smooth part of the LogReg
/// objective).
double logreg_loss(const Eigen::MatrixXd& x, const std::vector<int>& y, const Eigen::MatrixXd& w,
                   const Eigen::VectorXd& b);
/// Gradient of logreg_loss w.r.t. w (n_classes x dim).
Eigen::MatrixXd logreg_gradient(const Eigen::MatrixXd& x, const std::vector<int>& y,
                                const Eigen::MatrixXd& w, const Eigen::VectorXd& b);

/// Mean squared hinge summed over one-vs-rest classes.
double svm_loss(const Eigen::MatrixXd& x, const std::vector<int>& y, const Eigen::MatrixXd& w,
                const Eigen::VectorXd& b);
Eigen::MatrixXd svm_gradient(const Eigen::MatrixXd& x, const std::vector<int>& y,
                             const Eigen::MatrixXd& w, const Eigen::VectorXd& b);

/// Smallest lambda at which the all-zero coefficient matrix is optimal.
double lambda_max(ProbeKind kind, const Eigen::MatrixXd& x, const std::vector<int>& y,
                  int n_classes = 3);

/// Minimizes logreg_loss + lambda * sum|w| (intercepts unpenalized) by
/// proximal Newton (coordinate-descent inner solves, Armijo line search).
ProbeModel fit_l1_logreg(const Eigen::MatrixXd& x, const std::vector<int>& y, double lambda,
                         const SolverOptions& opts = {}, const ProbeModel* warm = nullptr,
                         FitTrace* trace = nullptr);

/// One-vs-rest: per class, mean squared hinge + lambda * sum|w|.
ProbeModel fit_l1_svm(const Eigen::MatrixXd& x, const std::vector<int>& y, double lambda,
                      const SolverOptions& opts = {}, const ProbeModel* warm = nullptr,
                      FitTrace* trace = nullptr);

ProbeModel fit_probe(ProbeKind kind, const Eigen::MatrixXd& x, const std::vector<int>& y,
                     double lambda, const SolverOptions& opts = {}, const ProbeModel* warm = nullptr,
                     FitTrace* trace = nullptr);

/// Largest subgradient-optimality violation of a fitted model.
double kkt_violation(const ProbeModel& m, const Eigen::MatrixXd& x, const std::vector<int>& y);

/// Support-weighted mean of per-class F1, in percent.
double weighted_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred);

/// Columns j with max_c |w(c, j)| > threshold.
std::set<int> select_features(const ProbeModel& m, double threshold = 0.0);

/// Per-class shuffle (seeded), then the first round(fraction * n_c) of each
/// class go to the test side.
struct Split {
  std::vector<int> train;
  std::vector<int> test;
};
Split stratified_split(const std::vector<int>& y, double test_fraction, std::uint64_t seed);

/// Fold index per sample; each class is dealt round-robin over k folds.
std::vector<int> stratified_folds(const std::vector<int>& y, int k, std::uint64_t seed);

/// Column means and standard deviations (zero-variance columns get scale 1).
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& x);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};

/// `count` log-spaced values from lambda_max down to ratio * lambda_max.
std::vector<double> lambda_grid(double lambda_max, int count, double ratio);

struct ProbeConfig {
  ProbeKind kind = ProbeKind::LogReg;
  std::vector<double> lambda_grid;  // empty: automatic grid
  int grid_size = 20;
  double grid_ratio = 1e-4;
  int cv_folds = 5;
  double test_fraction = 0.2;
  std::uint64_t seed = 1;
  double tol = 1e-6;
  int max_iter = 5000;
  int n_classes = 3;
  int jobs = 1;
};

struct LayerScore {
  std::size_t layer = 0;
  double test_f1 = 0.0;     // percent
  double cv_f1 = 0.0;       // mean inner-CV weighted-F1 at the chosen lambda
  double lambda = 0.0;
  std::size_t n_selected = 0;
};

struct ProbeResult {
  std::vector<LayerScore> layers;
  std::size_t best_layer = 0;
  std::set<int> selected_features;
  ProbeModel model;            // best layer, fitted on the standardized training split
  Standardizer standardizer;   // best layer
  Split split;
};

/// Per layer: inner stratified CV over the lambda grid on the training split
/// (weighted-F1, ties to the larger lambda), refit on the training split,
/// score on the held-out split. Best layer: highest test score, ties to the
/// lowest index.
ProbeResult layer_sweep(const std::vector<Eigen::MatrixXd>& layers, const std::vector<int>& y,
                        const ProbeConfig& cfg);

}  // namespace segprobe
