// src/probe.cc

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

#include "segprobe/probe.h"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "segprobe/error.h"
#include "segprobe/log.h"

namespace segprobe {

std::string_view to_string(ProbeKind k) { return k == ProbeKind::LogReg ? "LR" : "SVM"; }

ProbeKind parse_probe_kind(std::string_view s) {
  if (s == "LR" || s == "logreg" || s == "LogReg") return ProbeKind::LogReg;
  if (s == "SVM" || s == "svm" || s == "LinearSVM") return ProbeKind::LinearSVM;
  throw ParseError(fmt::format("unknown probe kind '{}'", s));
}

Eigen::MatrixXd ProbeModel::scores(const Eigen::MatrixXd& x) const {
  return (x * w.transpose()).rowwise() + b.transpose();
}

std::vector<int> ProbeModel::predict(const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd s = scores(x);
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Eigen::Index arg = 0;
    s.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

void check_inputs(const Eigen::MatrixXd& x, const std::vector<int>& y, int n_classes,
                  std::string_view who) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw ValidationError(fmt::format("{}: {} rows but {} labels", who, x.rows(), y.size()));
  }
  if (!x.allFinite()) throw ValidationError(fmt::format("{}: non-finite values in X", who));
  std::set<int> present;
  for (int c : y) {
    if (c < 0 || c >= n_classes) throw ValidationError(fmt::format("{}: label {} out of range", who, c));
    present.insert(c);
  }
  if (present.size() < 2) throw ValidationError(fmt::format("{}: single-class y", who));
  if (x.rows() < n_classes && x.rows() < 2) {
    throw ValidationError(fmt::format("{}: too few samples", who));
  }
}

// Row-wise softmax with log-sum-exp over the given logits.
void softmax_rows(const Eigen::MatrixXd& z, Eigen::MatrixXd& p, Eigen::VectorXd& lse) {
  p.resize(z.rows(), z.cols());
  lse.resize(z.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    double s = 0.0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      p(i, c) = std::exp(z(i, c) - m);
      s += p(i, c);
    }
    p.row(i) /= s;
    lse[i] = m + std::log(s);
  }
}

double l1(const Eigen::MatrixXd& w) { return w.cwiseAbs().sum(); }

// Violation of the subgradient conditions given the smooth-part gradient.
double kkt_from_gradient(const Eigen::MatrixXd& grad_w, const Eigen::VectorXd& grad_b,
                         const Eigen::MatrixXd& w, double lambda) {
  double v = grad_b.size() ? grad_b.cwiseAbs().maxCoeff() : 0.0;
  for (Eigen::Index c = 0; c < w.rows(); ++c) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      const double g = grad_w(c, j);
      const double r = w(c, j) == 0.0 ? std::max(0.0, std::abs(g) - lambda)
                                       : std::abs(g + lambda * (w(c, j) > 0 ? 1.0 : -1.0));
      v = std::max(v, r);
    }
  }
  return v;
}

// Proximal Newton step for one coefficient row: coordinate descent on the
// weighted-lasso quadratic model of the loss around the current scores.
// g and h are per-sample first and second derivatives of the loss with
// respect to the row's score; curvature is floored at a small fraction of
// the global bound so the model stays strictly convex.
struct Direction {
  Eigen::VectorXd dw;
  double db = 0.0;
  Eigen::VectorXd delta;  // change of each sample's score
  double decrease = 0.0;  // predicted change of the composite objective (< 0)
};

Direction newton_direction(const Eigen::MatrixXd& x, const Eigen::VectorXd& col_sq, const Eigen::VectorXd& g,
                           const Eigen::VectorXd& h, const Eigen::VectorXd& w, double lambda, double bound,
                           double tol) {
  const double n = static_cast<double>(x.rows());
  const Eigen::Index d = x.cols();
  const Eigen::VectorXd hj = x.array().square().matrix().transpose() * h / n;
  Eigen::VectorXd extra(d);
  for (Eigen::Index j = 0; j < d; ++j) extra[j] = std::max(0.0, 1e-4 * bound * col_sq[j] - hj[j]);
  const double hb = h.mean();
  const double extra_b = std::max(0.0, 1e-4 * bound - hb);

  Direction dir;
  dir.dw = Eigen::VectorXd::Zero(d);
  dir.delta = Eigen::VectorXd::Zero(x.rows());
  for (int sweep = 0; sweep < 500; ++sweep) {
    double change = 0.0;
    {
      const double grad = (g + h.cwiseProduct(dir.delta)).mean() + extra_b * dir.db;
      const double step = -grad / (hb + extra_b);
      dir.db += step;
      dir.delta.array() += step;
      change = std::max(change, std::abs(grad));
    }
    for (Eigen::Index j = 0; j < d; ++j) {
      const double hh = hj[j] + extra[j];
      if (hh <= 0.0) continue;
      const double cur = w[j] + dir.dw[j];
      const double grad = x.col(j).dot(g + h.cwiseProduct(dir.delta)) / n + extra[j] * dir.dw[j];
      const double next = soft_threshold(cur - grad / hh, lambda / hh);
      const double step = next - cur;
      if (step != 0.0) {
        dir.dw[j] += step;
        dir.delta += step * x.col(j);
      }
      change = std::max(change, hh * std::abs(step));
    }
    if (change < tol) break;
  }
  dir.decrease = g.dot(dir.delta) / n + lambda * ((w + dir.dw).cwiseAbs().sum() - w.cwiseAbs().sum());
  return dir;
}

// Backtracking on the true objective along a direction; `eval(t)` returns
// the objective at step t. Returns the accepted step or 0.
template <typename Eval>
double line_search(const Direction& dir, double f0, Eval eval) {
  if (!(dir.decrease < 0.0)) return 0.0;
  double t = 1.0;
  for (int i = 0; i < 60; ++i, t *= 0.5) {
    const double f = eval(t);
    if (f <= f0 + 1e-4 * t * dir.decrease) return t;
  }
  return eval(1.0) <= f0 ? 1.0 : 0.0;
}

// Multinomial logistic state over the classes present in y.
class LogRegSolver {
 public:
  LogRegSolver(const Eigen::MatrixXd& x, const std::vector<int>& y, std::vector<int> classes,
               double lambda)
      : x_(x), lambda_(lambda), classes_(std::move(classes)) {
    n_ = static_cast<double>(x.rows());
    const auto k = static_cast<Eigen::Index>(classes_.size());
    std::map<int, int> compact;
    for (std::size_t c = 0; c < classes_.size(); ++c) compact[classes_[c]] = static_cast<int>(c);
    y_ = Eigen::MatrixXd::Zero(x.rows(), k);
    yi_.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      yi_[i] = compact.at(y[i]);
      y_(static_cast<Eigen::Index>(i), yi_[i]) = 1.0;
    }
    col_sq_ = x.colwise().squaredNorm().transpose() / n_;
    w_ = Eigen::MatrixXd::Zero(k, x.cols());
    b_.resize(k);
    for (Eigen::Index c = 0; c < k; ++c) b_[c] = std::log(y_.col(c).mean());
  }

  void set_start(const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
    for (std::size_t c = 0; c < classes_.size(); ++c) {
      w_.row(static_cast<Eigen::Index>(c)) = w.row(classes_[c]);
      if (std::isfinite(b[classes_[c]])) b_[static_cast<Eigen::Index>(c)] = b[classes_[c]];
    }
  }

  void refresh() {
    z_ = (x_ * w_.transpose()).rowwise() + b_.transpose();
    softmax_rows(z_, p_, lse_);
    loss_ = loss_of(z_);
  }

  double objective() const { return loss_ + lambda_ * l1(w_); }

  double kkt() const {
    const Eigen::MatrixXd r = p_ - y_;
    const Eigen::MatrixXd gw = (r.transpose() * x_) / n_;
    const Eigen::VectorXd gb = r.colwise().sum().transpose() / n_;
    return kkt_from_gradient(gw, gb, w_, lambda_);
  }

  // One joint proximal Newton update of all rows; false when nothing moved.
  // The quadratic model uses the full multinomial Hessian: per sample,
  // diag(p) - p p^T acting on the score changes.
  bool step(double tol, const std::function<void()>& after_update) {
    const Eigen::Index k = w_.rows(), d = w_.cols();
    const Eigen::MatrixXd g = p_ - y_;
    const Eigen::MatrixXd hdiag = p_.array() * (1.0 - p_.array());
    const Eigen::MatrixXd hj = hdiag.transpose() * x_.array().square().matrix() / n_;  // k x d
    Eigen::MatrixXd dw = Eigen::MatrixXd::Zero(k, d);
    Eigen::VectorXd db = Eigen::VectorXd::Zero(k);
    Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(x_.rows(), k);
    Eigen::VectorXd pd = Eigen::VectorXd::Zero(x_.rows());  // sum_k p_ik delta_ik
    auto model_residual = [&](Eigen::Index c) -> Eigen::VectorXd {
      return g.col(c) + p_.col(c).cwiseProduct(delta.col(c) - pd);
    };
    auto apply = [&](Eigen::Index c, const Eigen::VectorXd& change) {
      delta.col(c) += change;
      pd += p_.col(c).cwiseProduct(change);
    };
    for (int sweep = 0; sweep < 500; ++sweep) {
      double change = 0.0;
      for (Eigen::Index c = 0; c < k; ++c) {
        const double hb = std::max(hdiag.col(c).mean(), 1e-4 * 0.25);
        const double grad = model_residual(c).mean();
        db[c] -= grad / hb;
        apply(c, Eigen::VectorXd::Constant(x_.rows(), -grad / hb));
        change = std::max(change, std::abs(grad));
        for (Eigen::Index j = 0; j < d; ++j) {
          const double floor = 1e-4 * 0.25 * col_sq_[j];
          if (floor <= 0.0) continue;
          const double extra = std::max(0.0, floor - hj(c, j));
          const double hh = hj(c, j) + extra;
          const double cur = w_(c, j) + dw(c, j);
          const double grad_j = x_.col(j).dot(model_residual(c)) / n_ + extra * dw(c, j);
          const double step = soft_threshold(cur - grad_j / hh, lambda_ / hh) - cur;
          if (step != 0.0) {
            dw(c, j) += step;
            apply(c, step * x_.col(j));
          }
          change = std::max(change, hh * std::abs(step));
        }
      }
      if (change < tol) break;
    }
    const double decrease = (g.cwiseProduct(delta)).sum() / n_ + lambda_ * (l1(w_ + dw) - l1(w_));
    Direction dir;
    dir.decrease = decrease;
    const double t = line_search(dir, objective(), [&](double s) {
      return loss_of(z_ + s * delta) + lambda_ * l1(w_ + s * dw);
    });
    if (t == 0.0) return false;
    w_ += t * dw;
    b_ += t * db;
    z_ += t * delta;
    softmax_rows(z_, p_, lse_);
    loss_ = loss_of(z_);
    after_update();
    return true;
  }

  ProbeModel model(int n_classes) const {
    ProbeModel m;
    m.kind = ProbeKind::LogReg;
    m.lambda = lambda_;
    m.w = Eigen::MatrixXd::Zero(n_classes, x_.cols());
    m.b = Eigen::VectorXd::Constant(n_classes, kNegInf);
    for (std::size_t c = 0; c < classes_.size(); ++c) {
      m.w.row(classes_[c]) = w_.row(static_cast<Eigen::Index>(c));
      m.b[classes_[c]] = b_[static_cast<Eigen::Index>(c)];
    }
    return m;
  }

 private:
  double loss_of(const Eigen::MatrixXd& z) const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double m = z.row(i).maxCoeff();
      s += m + std::log((z.row(i).array() - m).exp().sum()) - z(i, yi_[static_cast<std::size_t>(i)]);
    }
    return s / n_;
  }

  const Eigen::MatrixXd& x_;
  double lambda_;
  std::vector<int> classes_;
  double n_ = 0.0;
  Eigen::MatrixXd y_;
  std::vector<int> yi_;
  Eigen::VectorXd col_sq_;
  Eigen::MatrixXd w_;
  Eigen::VectorXd b_;
  Eigen::MatrixXd z_, p_;
  Eigen::VectorXd lse_;
  double loss_ = 0.0;
};

std::vector<int> present_classes(const std::vector<int>& y) {
  std::set<int> s(y.begin(), y.end());
  return {s.begin(), s.end()};
}

// Binary squared-hinge problem for one class against the rest.
class HingeSolver {
 public:
  HingeSolver(const Eigen::MatrixXd& x, const std::vector<int>& y, int cls, double lambda)
      : x_(x), lambda_(lambda) {
    n_ = static_cast<double>(x.rows());
    yb_.resize(x.rows());
    for (std::size_t i = 0; i < y.size(); ++i) yb_[static_cast<Eigen::Index>(i)] = y[i] == cls ? 1.0 : -1.0;
    col_sq_ = x.colwise().squaredNorm().transpose() / n_;
    w_ = Eigen::VectorXd::Zero(x.cols());
    b_ = yb_.mean();  // optimal intercept at w = 0
  }

  void set_start(const Eigen::VectorXd& w, double b) {
    w_ = w;
    b_ = std::isfinite(b) ? b : b_;
  }

  void refresh() {
    f_ = (x_ * w_).array() + b_;
    loss_ = loss_of(f_);
  }

  double objective() const { return loss_ + lambda_ * w_.cwiseAbs().sum(); }

  double kkt() const {
    const Eigen::VectorXd r = residual();
    Eigen::VectorXd gb(1);
    gb[0] = r.sum() / n_;
    return kkt_from_gradient((x_.transpose() * r / n_).transpose(), gb, w_.transpose(), lambda_);
  }

  bool step(double tol, const std::function<void()>& after_update) {
    const Eigen::VectorXd g = residual();
    const Eigen::VectorXd margin = 1.0 - yb_.array() * f_.array();
    const Eigen::VectorXd h = (margin.array() > 0).cast<double>() * 2.0;
    const Direction dir = newton_direction(x_, col_sq_, g, h, w_, lambda_, 2.0, tol);
    const double t = line_search(dir, objective(), [&](double s) {
      return loss_of(f_ + s * dir.delta) + lambda_ * (w_ + s * dir.dw).cwiseAbs().sum();
    });
    if (t == 0.0) return false;
    w_ += t * dir.dw;
    b_ += t * dir.db;
    f_ += t * dir.delta;
    loss_ = loss_of(f_);
    after_update();
    return true;
  }

  const Eigen::VectorXd& w() const { return w_; }
  double b() const { return b_; }

 private:
  // d loss_i / d score_i
  Eigen::VectorXd residual() const {
    const Eigen::ArrayXd m = 1.0 - yb_.array() * f_.array();
    return -2.0 * yb_.array() * m.max(0.0);
  }

  double loss_of(const Eigen::VectorXd& f) const {
    return (1.0 - yb_.array() * f.array()).max(0.0).square().sum() / n_;
  }

  const Eigen::MatrixXd& x_;
  double lambda_;
  double n_ = 0.0;
  Eigen::VectorXd yb_;
  Eigen::VectorXd col_sq_;
  Eigen::VectorXd w_;
  double b_ = 0.0;
  Eigen::VectorXd f_;
  double loss_ = 0.0;
};

// Proximal Newton passes until the KKT residual is below half the tolerance
// (the margin keeps an independent re-evaluation under tol).
template <typename Solver, typename Objective>
bool run_newton(Solver& s, const SolverOptions& opts, FitTrace& trace, Objective total_objective) {
  const double target = 0.5 * opts.tol;
  s.refresh();
  trace.kkt = s.kkt();
  while (trace.kkt > target && trace.sweeps < opts.max_iter) {
    ++trace.sweeps;
    // inexact inner solves far from the optimum, tight ones near it
    const double inner = std::max(0.05 * target, 0.01 * trace.kkt);
    const bool moved = s.step(inner, [&] { trace.objective.push_back(total_objective()); });
    s.refresh();
    trace.kkt = s.kkt();
    if (!moved) break;
  }
  return trace.kkt <= target;
}
}  // namespace

double logreg_loss(const Eigen::MatrixXd& x, const std::vector<int>& y, const Eigen::MatrixXd& w,
                   const Eigen::VectorXd& b) {
  const Eigen::MatrixXd z = (x * w.transpose()).rowwise() + b.transpose();
  Eigen::MatrixXd p;
  Eigen::VectorXd lse;
  softmax_rows(z, p, lse);
  double s = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) s += lse[i] - z(i, y[static_cast<std::size_t>(i)]);
  return s / static_cast<double>(x.rows());
}

Eigen::MatrixXd logreg_gradient(const Eigen::MatrixXd& x, const std::vector<int>& y,
                                const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
  const Eigen::MatrixXd z = (x * w.transpose()).rowwise() + b.transpose();
  Eigen::MatrixXd p;
  Eigen::VectorXd lse;
  softmax_rows(z, p, lse);
  for (std::size_t i = 0; i < y.size(); ++i) p(static_cast<Eigen::Index>(i), y[i]) -= 1.0;
  return p.transpose() * x / static_cast<double>(x.rows());
}

double svm_loss(const Eigen::MatrixXd& x, const std::vector<int>& y, const Eigen::MatrixXd& w,
                const Eigen::VectorXd& b) {
  const Eigen::MatrixXd f = (x * w.transpose()).rowwise() + b.transpose();
  double s = 0.0;
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (Eigen::Index c = 0; c < f.cols(); ++c) {
      const double yb = y[static_cast<std::size_t>(i)] == c ? 1.0 : -1.0;
      const double m = 1.0 - yb * f(i, c);
      if (m > 0) s += m * m;
    }
  }
  return s / static_cast<double>(x.rows());
}

Eigen::MatrixXd svm_gradient(const Eigen::MatrixXd& x, const std::vector<int>& y,
                             const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
  const Eigen::MatrixXd f = (x * w.transpose()).rowwise() + b.transpose();
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(f.rows(), f.cols());
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (Eigen::Index c = 0; c < f.cols(); ++c) {
      const double yb = y[static_cast<std::size_t>(i)] == c ? 1.0 : -1.0;
      const double m = 1.0 - yb * f(i, c);
      if (m > 0) r(i, c) = -2.0 * yb * m;
    }
  }
  return r.transpose() * x / static_cast<double>(x.rows());
}

double lambda_max(ProbeKind kind, const Eigen::MatrixXd& x, const std::vector<int>& y, int n_classes) {
  const double n = static_cast<double>(x.rows());
  Eigen::VectorXd freq = Eigen::VectorXd::Zero(n_classes);
  for (int c : y) freq[c] += 1.0 / n;
  Eigen::MatrixXd r(x.rows(), n_classes);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (int c = 0; c < n_classes; ++c) {
      const bool is_c = y[static_cast<std::size_t>(i)] == c;
      if (kind == ProbeKind::LogReg) {
        r(i, c) = freq[c] - (is_c ? 1.0 : 0.0);
      } else {
        const double yb = is_c ? 1.0 : -1.0;
        const double b_star = 2.0 * freq[c] - 1.0;  // (n+ - n-) / n
        r(i, c) = -2.0 * yb * (1.0 - yb * b_star);
      }
    }
  }
  return (r.transpose() * x / n).cwiseAbs().maxCoeff();
}

ProbeModel fit_l1_logreg(const Eigen::MatrixXd& x, const std::vector<int>& y, double lambda,
                         const SolverOptions& opts, const ProbeModel* warm, FitTrace* trace) {
  check_inputs(x, y, opts.n_classes, "fit_l1_logreg");
  if (lambda < 0) throw ValidationError("fit_l1_logreg: negative lambda");
  LogRegSolver s(x, y, present_classes(y), lambda);
  if (warm != nullptr && warm->w.rows() == opts.n_classes && warm->w.cols() == x.cols()) {
    s.set_start(warm->w, warm->b);
  }
  FitTrace local;
  FitTrace& t = trace ? *trace : local;
  t = {};
  t.converged = run_newton(s, opts, t, [&] { return s.objective(); });
  if (!t.converged) {
    log_debug("fit_l1_logreg: lambda {} stopped after {} sweeps, KKT residual {:.3g}", lambda, t.sweeps, t.kkt);
  }
  return s.model(opts.n_classes);
}

ProbeModel fit_l1_svm(const Eigen::MatrixXd& x, const std::vector<int>& y, double lambda,
                      const SolverOptions& opts, const ProbeModel* warm, FitTrace* trace) {
  check_inputs(x, y, opts.n_classes, "fit_l1_svm");
  if (lambda < 0) throw ValidationError("fit_l1_svm: negative lambda");
  std::vector<HingeSolver> solvers;
  solvers.reserve(static_cast<std::size_t>(opts.n_classes));
  for (int c = 0; c < opts.n_classes; ++c) {
    solvers.emplace_back(x, y, c, lambda);
    if (warm != nullptr && warm->w.rows() == opts.n_classes && warm->w.cols() == x.cols()) {
      solvers.back().set_start(warm->w.row(c).transpose(), warm->b[c]);
    }
    solvers.back().refresh();
  }
  FitTrace local;
  FitTrace& t = trace ? *trace : local;
  t = {};
  auto total = [&] {
    double s = 0.0;
    for (const auto& h : solvers) s += h.objective();
    return s;
  };
  bool ok = true;
  double worst = 0.0;
  for (auto& h : solvers) {
    FitTrace part;
    part.sweeps = 0;
    ok = run_newton(h, opts, part, total) && ok;
    worst = std::max(worst, part.kkt);
    t.sweeps += part.sweeps;
    t.objective.insert(t.objective.end(), part.objective.begin(), part.objective.end());
  }
  t.converged = ok;
  t.kkt = worst;
  if (!ok) log_debug("fit_l1_svm: lambda {} KKT residual {:.3g}", lambda, worst);

  ProbeModel m;
  m.kind = ProbeKind::LinearSVM;
  m.lambda = lambda;
  m.w.resize(opts.n_classes, x.cols());
  m.b.resize(opts.n_classes);
  for (int c = 0; c < opts.n_classes; ++c) {
    m.w.row(c) = solvers[static_cast<std::size_t>(c)].w().transpose();
    m.b[c] = solvers[static_cast<std::size_t>(c)].b();
  }
  return m;
}

ProbeModel fit_probe(ProbeKind kind, const Eigen::MatrixXd& x, const std::vector<int>& y,
                     double lambda, const SolverOptions& opts, const ProbeModel* warm, FitTrace* trace) {
  return kind == ProbeKind::LogReg ? fit_l1_logreg(x, y, lambda, opts, warm, trace)
                                   : fit_l1_svm(x, y, lambda, opts, warm, trace);
}

double kkt_violation(const ProbeModel& m, const Eigen::MatrixXd& x, const std::vector<int>& y) {
  const double n = static_cast<double>(x.rows());
  if (m.kind == ProbeKind::LogReg) {
    std::vector<Eigen::Index> live;
    for (Eigen::Index c = 0; c < m.b.size(); ++c) {
      if (std::isfinite(m.b[c])) live.push_back(c);
    }
    Eigen::MatrixXd w(static_cast<Eigen::Index>(live.size()), m.w.cols());
    Eigen::VectorXd b(static_cast<Eigen::Index>(live.size()));
    for (std::size_t k = 0; k < live.size(); ++k) {
      w.row(static_cast<Eigen::Index>(k)) = m.w.row(live[k]);
      b[static_cast<Eigen::Index>(k)] = m.b[live[k]];
    }
    Eigen::MatrixXd z = (x * w.transpose()).rowwise() + b.transpose();
    Eigen::MatrixXd p;
    Eigen::VectorXd lse;
    softmax_rows(z, p, lse);
    for (std::size_t i = 0; i < y.size(); ++i) {
      for (std::size_t k = 0; k < live.size(); ++k) {
        if (live[k] == y[i]) p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) -= 1.0;
      }
    }
    const Eigen::MatrixXd gw = p.transpose() * x / n;
    const Eigen::VectorXd gb = p.colwise().sum().transpose() / n;
    return kkt_from_gradient(gw, gb, w, m.lambda);
  }
  const Eigen::MatrixXd f = (x * m.w.transpose()).rowwise() + m.b.transpose();
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(f.rows(), f.cols());
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (Eigen::Index c = 0; c < f.cols(); ++c) {
      const double yb = y[static_cast<std::size_t>(i)] == c ? 1.0 : -1.0;
      const double mg = 1.0 - yb * f(i, c);
      if (mg > 0) r(i, c) = -2.0 * yb * mg;
    }
  }
  const Eigen::MatrixXd gw = r.transpose() * x / n;
  const Eigen::VectorXd gb = r.colwise().sum().transpose() / n;
  return kkt_from_gradient(gw, gb, m.w, m.lambda);
}

double weighted_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  if (y_true.size() != y_pred.size()) throw ValidationError("weighted_f1: length mismatch");
  if (y_true.empty()) throw ValidationError("weighted_f1: empty input");
  std::map<int, std::array<double, 3>> counts;  // tp, fp, fn
  std::map<int, double> support;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    support[y_true[i]] += 1.0;
    if (y_true[i] == y_pred[i]) {
      counts[y_true[i]][0] += 1.0;
    } else {
      counts[y_pred[i]][1] += 1.0;
      counts[y_true[i]][2] += 1.0;
    }
  }
  const double n = static_cast<double>(y_true.size());
  double total = 0.0;
  for (const auto& [c, s] : support) {
    const auto& k = counts[c];
    const double f1 = 2 * k[0] / (2 * k[0] + k[1] + k[2]);
    total += s / n * f1;
  }
  return 100.0 * total;
}

std::set<int> select_features(const ProbeModel& m, double threshold) {
  std::set<int> out;
  for (Eigen::Index j = 0; j < m.w.cols(); ++j) {
    if (m.w.col(j).cwiseAbs().maxCoeff() > threshold) out.insert(static_cast<int>(j));
  }
  return out;
}

Split stratified_split(const std::vector<int>& y, double test_fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(static_cast<int>(i));
  Split s;
  for (auto& [c, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    if (idx.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    else n_test = 0;
    s.test.insert(s.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.train.insert(s.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::vector<int> stratified_folds(const std::vector<int>& y, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("stratified_folds: need at least 2 folds");
  std::mt19937_64 rng(seed);
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(static_cast<int>(i));
  std::vector<int> fold(y.size(), 0);
  std::size_t offset = 0;
  for (auto& [c, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      fold[static_cast<std::size_t>(idx[i])] = static_cast<int>((offset + i) % static_cast<std::size_t>(k));
    }
    offset += idx.size();
  }
  return fold;
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& x) {
  Standardizer s;
  s.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - s.mean;
  s.scale = (centered.colwise().squaredNorm() / static_cast<double>(x.rows())).cwiseSqrt();
  for (Eigen::Index j = 0; j < s.scale.size(); ++j) {
    if (s.scale[j] < 1e-12) s.scale[j] = 1.0;
  }
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& x) const {
  return (x.rowwise() - mean).array().rowwise() / scale.array();
}

std::vector<double> lambda_grid(double lmax, int count, double ratio) {
  if (count < 1) throw ValidationError("lambda_grid: count must be positive");
  if (!(lmax > 0)) return {0.0};
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double t = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    out[static_cast<std::size_t>(i)] = lmax * std::pow(ratio, t);
  }
  return out;
}

namespace {

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, const std::vector<int>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

std::vector<int> take(const std::vector<int>& v, const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(v[static_cast<std::size_t>(i)]);
  return out;
}

struct LayerOutcome {
  LayerScore score;
  ProbeModel model;
  Standardizer standardizer;
};

LayerOutcome sweep_one_layer(const Eigen::MatrixXd& x_all, const std::vector<int>& y,
                             const Split& split, const std::vector<int>& folds,
                             const ProbeConfig& cfg, std::size_t layer) {
  const SolverOptions opts{cfg.n_classes, cfg.tol, cfg.max_iter};
  const Eigen::MatrixXd x_train_raw = take_rows(x_all, split.train);
  const std::vector<int> y_train = take(y, split.train);
  LayerOutcome out;
  out.standardizer = Standardizer::fit(x_train_raw);
  const Eigen::MatrixXd x_train = out.standardizer.apply(x_train_raw);
  const Eigen::MatrixXd x_test = out.standardizer.apply(take_rows(x_all, split.test));
  const std::vector<int> y_test = take(y, split.test);

  std::vector<double> grid = cfg.lambda_grid;
  if (grid.empty()) {
    grid = lambda_grid(lambda_max(cfg.kind, x_train, y_train, cfg.n_classes), cfg.grid_size, cfg.grid_ratio);
  }
  std::sort(grid.begin(), grid.end(), std::greater<>());

  std::vector<double> cv(grid.size(), 0.0);
  for (int f = 0; f < cfg.cv_folds; ++f) {
    std::vector<int> tr, va;
    for (std::size_t i = 0; i < folds.size(); ++i) (folds[i] == f ? va : tr).push_back(static_cast<int>(i));
    const Eigen::MatrixXd xtr_raw = take_rows(x_train_raw, tr);
    const Standardizer sf = Standardizer::fit(xtr_raw);
    const Eigen::MatrixXd xtr = sf.apply(xtr_raw);
    const Eigen::MatrixXd xva = sf.apply(take_rows(x_train_raw, va));
    const std::vector<int> ytr = take(y_train, tr);
    const std::vector<int> yva = take(y_train, va);
    ProbeModel prev;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      ProbeModel m = fit_probe(cfg.kind, xtr, ytr, grid[g], opts, g ? &prev : nullptr);
      cv[g] += weighted_f1(yva, m.predict(xva)) / cfg.cv_folds;
      prev = std::move(m);
    }
  }
  std::size_t chosen = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (cv[g] > cv[chosen] + 1e-9) chosen = g;
  }

  ProbeModel prev;
  for (std::size_t g = 0; g <= chosen; ++g) {
    ProbeModel m = fit_probe(cfg.kind, x_train, y_train, grid[g], opts, g ? &prev : nullptr);
    prev = std::move(m);
  }
  out.model = std::move(prev);
  out.score.layer = layer;
  out.score.cv_f1 = cv[chosen];
  out.score.lambda = grid[chosen];
  out.score.test_f1 = weighted_f1(y_test, out.model.predict(x_test));
  out.score.n_selected = select_features(out.model).size();
  return out;
}

bool folds_cover_classes(const std::vector<int>& y, const std::vector<int>& folds, int k) {
  const std::set<int> all(y.begin(), y.end());
  std::vector<std::set<int>> seen(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < y.size(); ++i) seen[static_cast<std::size_t>(folds[i])].insert(y[i]);
  return std::all_of(seen.begin(), seen.end(), [&](const auto& s) { return s == all; });
}

}  // namespace

ProbeResult layer_sweep(const std::vector<Eigen::MatrixXd>& layers, const std::vector<int>& y,
                        const ProbeConfig& cfg) {
  if (layers.empty()) throw ValidationError("layer_sweep: no layers");
  if (cfg.cv_folds < 2) throw ValidationError("layer_sweep: need at least 2 folds");
  if (!cfg.lambda_grid.empty() &&
      std::any_of(cfg.lambda_grid.begin(), cfg.lambda_grid.end(), [](double l) { return !(l >= 0); })) {
    throw ValidationError("layer_sweep: lambda grid values must be non-negative");
  }
  for (const auto& l : layers) {
    if (static_cast<std::size_t>(l.rows()) != y.size()) {
      throw ValidationError("layer_sweep: layer rows do not match label count");
    }
  }
  ProbeResult result;
  result.split = stratified_split(y, cfg.test_fraction, cfg.seed);
  const std::vector<int> y_train = take(y, result.split.train);
  if (std::set<int>(y_train.begin(), y_train.end()).size() < 2) {
    throw ValidationError("layer_sweep: fewer than 2 accent classes in the training split");
  }
  std::vector<int> folds;
  bool ok = false;
  for (int attempt = 0; attempt < 5 && !ok; ++attempt) {
    folds = stratified_folds(y_train, cfg.cv_folds, cfg.seed + static_cast<std::uint64_t>(attempt));
    ok = folds_cover_classes(y_train, folds, cfg.cv_folds);
  }
  if (!ok) {
    throw ValidationError(fmt::format(
        "layer_sweep: a cross-validation fold lacks a class after 5 attempts (some class has fewer than {} training tokens)",
        cfg.cv_folds));
  }

  std::vector<LayerOutcome> outcomes(layers.size());
  std::vector<std::exception_ptr> errors(layers.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t l = next++; l < layers.size(); l = next++) {
      try {
        outcomes[l] = sweep_one_layer(layers[l], y, result.split, folds, cfg, l);
      } catch (...) {
        errors[l] = std::current_exception();
      }
    }
  };
  const int jobs = std::clamp<int>(cfg.jobs, 1, static_cast<int>(layers.size()));
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  for (std::size_t l = 0; l < outcomes.size(); ++l) {
    result.layers.push_back(outcomes[l].score);
    if (outcomes[l].score.test_f1 > outcomes[result.best_layer].score.test_f1) result.best_layer = l;
  }
  result.model = outcomes[result.best_layer].model;
  result.standardizer = outcomes[result.best_layer].standardizer;
  result.selected_features = select_features(result.model);
  return result;
}

}  // namespace segprobe
