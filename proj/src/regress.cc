// src/regress.cc

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

#include "segprobe/regress.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "segprobe/error.h"
#include "segprobe/log.h"

namespace segprobe {

std::string_view to_string(Variety v) { return v == Variety::AE ? "AE" : "IE"; }

BaselineBank BaselineBank::capped(std::size_t cap, std::uint64_t seed) const {
  if (cap == 0 || static_cast<std::size_t>(vectors.rows()) <= cap) return *this;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(vectors.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  BaselineBank out{variety, segment, Eigen::MatrixXd(static_cast<Eigen::Index>(cap), vectors.cols())};
  for (std::size_t i = 0; i < cap; ++i) out.vectors.row(static_cast<Eigen::Index>(i)) = vectors.row(idx[i]);
  return out;
}

double average_distance(const Eigen::VectorXd& v, const BaselineBank& bank) {
  if (bank.vectors.rows() == 0) {
    throw ValidationError(fmt::format("empty {} baseline bank for '{}'", to_string(bank.variety), bank.segment));
  }
  if (bank.vectors.cols() != v.size()) {
    throw ValidationError(fmt::format("distance: vector dim {} vs bank dim {}", v.size(), bank.vectors.cols()));
  }
  return (bank.vectors.rowwise() - v.transpose()).rowwise().norm().mean();
}

double average_distance(const Eigen::VectorXd& v, const BaselineBank& bank, std::size_t cap, std::uint64_t seed) {
  return average_distance(v, bank.capped(cap, seed));
}

std::vector<DistanceRecord> compute_distances(const std::vector<PhoneToken>& tokens,
                                              const Eigen::MatrixXd& vectors, const BaselineBank& ae,
                                              const BaselineBank& ie, int jobs) {
  if (static_cast<std::size_t>(vectors.rows()) != tokens.size()) {
    throw ValidationError("compute_distances: vector rows do not match tokens");
  }
  std::vector<DistanceRecord> out(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& t = tokens[i];
    if (!t.accent) throw ValidationError(fmt::format("token {} has no accent rating", t.token_id));
    out[i].token_id = t.token_id;
    out[i].segment = t.phone;
    out[i].position = t.position;
    out[i].accent = *t.accent;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tokens.size(); i = next++) {
      const Eigen::VectorXd v = vectors.row(static_cast<Eigen::Index>(i)).transpose();
      out[i].d_ae = average_distance(v, ae);
      out[i].d_ie = average_distance(v, ie);
    }
  };
  // empty banks and dim mismatches are reported before spawning workers
  if (!tokens.empty()) {
    average_distance(vectors.row(0).transpose(), ae);
    average_distance(vectors.row(0).transpose(), ie);
  }
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  standardize(out);
  return out;
}

void standardize(std::vector<DistanceRecord>& records) {
  if (records.empty()) return;
  const double n = static_cast<double>(records.size());
  auto zscore = [&](auto get, auto set) {
    double mean = 0.0;
    for (const auto& r : records) mean += get(r) / n;
    double var = 0.0;
    for (const auto& r : records) var += (get(r) - mean) * (get(r) - mean) / n;
    const double sd = std::sqrt(var);
    if (!(sd > 0.0)) throw NumericalError("distances have zero variance; cannot standardize");
    for (auto& r : records) set(r, (get(r) - mean) / sd);
  };
  zscore([](const DistanceRecord& r) { return r.d_ae; }, [](DistanceRecord& r, double z) { r.z_ae = z; });
  zscore([](const DistanceRecord& r) { return r.d_ie; }, [](DistanceRecord& r, double z) { r.z_ie = z; });
}

TsvTable distance_table(const std::vector<DistanceRecord>& records) {
  TsvTable t;
  t.columns = {"token_id", "segment", "position", "accent", "d_AE", "d_IE", "z_AE", "z_IE"};
  for (const auto& r : records) {
    t.rows.push_back({r.token_id, r.segment, std::string(to_string(r.position)), std::string(to_string(r.accent)),
                      format_exact(r.d_ae), format_exact(r.d_ie), format_exact(r.z_ae), format_exact(r.z_ie)});
  }
  return t;
}

std::vector<DistanceRecord> distances_from_table(const TsvTable& t) {
  const std::size_t c_id = t.column("token_id"), c_seg = t.column("segment"), c_pos = t.column("position"),
                    c_acc = t.column("accent"), c_ae = t.column("d_AE"), c_ie = t.column("d_IE"),
                    c_zae = t.column("z_AE"), c_zie = t.column("z_IE");
  std::vector<DistanceRecord> out;
  for (const auto& row : t.rows) {
    DistanceRecord r;
    r.token_id = row[c_id];
    r.segment = row[c_seg];
    r.position = parse_position(row[c_pos]);
    r.accent = parse_accent(row[c_acc]);
    r.d_ae = parse_double(row[c_ae], "d_AE");
    r.d_ie = parse_double(row[c_ie], "d_IE");
    r.z_ae = parse_double(row[c_zae], "z_AE");
    r.z_ie = parse_double(row[c_zie], "z_IE");
    out.push_back(std::move(r));
  }
  return out;
}

Design regression_design(const std::vector<DistanceRecord>& records) {
  Design d;
  d.columns = {"(Intercept)", "d_AE", "d_IE", "Medial", "Final",
               "d_AE:Medial", "d_AE:Final", "d_IE:Medial", "d_IE:Final"};
  d.x.resize(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(d.columns.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const double med = r.position == WordPosition::Medial ? 1.0 : 0.0;
    const double fin = r.position == WordPosition::Final ? 1.0 : 0.0;
    d.x.row(static_cast<Eigen::Index>(i)) << 1.0, r.z_ae, r.z_ie, med, fin, r.z_ae * med, r.z_ae * fin,
        r.z_ie * med, r.z_ie * fin;
    d.y.push_back(static_cast<int>(r.accent));
  }
  return d;
}

Eigen::MatrixXd multinomial_probs(const Eigen::MatrixXd& x, const Eigen::MatrixXd& beta) {
  Eigen::MatrixXd eta(x.rows(), beta.rows() + 1);
  eta.col(0).setZero();
  eta.rightCols(beta.rows()) = x * beta.transpose();
  for (Eigen::Index i = 0; i < eta.rows(); ++i) {
    const double m = eta.row(i).maxCoeff();
    eta.row(i) = (eta.row(i).array() - m).exp();
    eta.row(i) /= eta.row(i).sum();
  }
  return eta;
}

namespace {

// Column of the compact outcome (0 = reference) for each observation.
std::vector<int> compact_outcomes(const std::vector<int>& y, const std::vector<int>& levels) {
  std::vector<int> out(y.size(), -1);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 0) {
      out[i] = 0;
      continue;
    }
    for (std::size_t l = 0; l < levels.size(); ++l) {
      if (levels[l] == y[i]) out[i] = static_cast<int>(l) + 1;
    }
    if (out[i] < 0) throw ValidationError(fmt::format("outcome {} has no coefficient row", y[i]));
  }
  return out;
}

}  // namespace

double multinomial_loglik(const Eigen::MatrixXd& x, const std::vector<int>& y, const std::vector<int>& levels,
                          const Eigen::MatrixXd& beta) {
  const auto yc = compact_outcomes(y, levels);
  Eigen::MatrixXd eta(x.rows(), beta.rows() + 1);
  eta.col(0).setZero();
  eta.rightCols(beta.rows()) = x * beta.transpose();
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.rows(); ++i) {
    const double m = eta.row(i).maxCoeff();
    ll += eta(i, yc[static_cast<std::size_t>(i)]) - m - std::log((eta.row(i).array() - m).exp().sum());
  }
  return ll;
}

Eigen::MatrixXd multinomial_gradient(const Eigen::MatrixXd& x, const std::vector<int>& y,
                                     const std::vector<int>& levels, const Eigen::MatrixXd& beta) {
  const auto yc = compact_outcomes(y, levels);
  Eigen::MatrixXd r = -multinomial_probs(x, beta);
  for (std::size_t i = 0; i < yc.size(); ++i) r(static_cast<Eigen::Index>(i), yc[i]) += 1.0;
  return r.rightCols(beta.rows()).transpose() * x;
}

namespace {

Eigen::MatrixXd information(const Eigen::MatrixXd& x, const Eigen::MatrixXd& probs) {
  const Eigen::Index levels = probs.cols() - 1, p = x.cols();
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(levels * p, levels * p);
  for (Eigen::Index l = 0; l < levels; ++l) {
    for (Eigen::Index m = l; m < levels; ++m) {
      Eigen::VectorXd w = -probs.col(l + 1).cwiseProduct(probs.col(m + 1));
      if (l == m) w += probs.col(l + 1);
      const Eigen::MatrixXd block = x.transpose() * w.asDiagonal() * x;
      info.block(l * p, m * p, p, p) = block;
      if (l != m) info.block(m * p, l * p, p, p) = block.transpose();
    }
  }
  return info;
}

void check_columns(const Design& d) {
  for (Eigen::Index j = 0; j < d.x.cols(); ++j) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.x.leftCols(j + 1));
    qr.setThreshold(1e-10);
    if (qr.rank() < j + 1) {
      throw NumericalError(fmt::format("singular information matrix: column '{}' is constant or collinear",
                                       d.columns[static_cast<std::size_t>(j)]));
    }
  }
}

}  // namespace

RegressionResult fit_multinomial(const Design& d, const MultinomialOptions& opts) {
  if (static_cast<std::size_t>(d.x.rows()) != d.y.size()) throw ValidationError("design rows do not match outcomes");
  if (d.columns.size() != static_cast<std::size_t>(d.x.cols())) throw ValidationError("design column names");
  if (!d.x.allFinite()) throw ValidationError("non-finite regression predictor");
  std::map<int, double> counts;
  for (int v : d.y) counts[v] += 1.0;
  if (!counts.contains(0)) throw ValidationError("reference outcome level absent");
  if (counts.size() < 2) throw ValidationError("fewer than 2 outcome levels present");
  check_columns(d);

  RegressionResult r;
  r.columns = d.columns;
  r.n = d.y.size();
  for (const auto& [level, c] : counts) {
    if (level != 0) r.levels.push_back(level);
  }
  const auto levels = static_cast<Eigen::Index>(r.levels.size());
  const Eigen::Index p = d.x.cols();
  const double n = static_cast<double>(r.n);

  // intercept-only MLE as the starting point when the first column is constant
  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(levels, p);
  if ((d.x.col(0).array() == 1.0).all()) {
    for (Eigen::Index l = 0; l < levels; ++l) beta(l, 0) = std::log(counts[r.levels[l]] / counts[0]);
  }
  double ll = multinomial_loglik(d.x, d.y, r.levels, beta);
  bool converged = false;
  for (r.iterations = 0; r.iterations < opts.max_iter; ++r.iterations) {
    const Eigen::MatrixXd g = multinomial_gradient(d.x, d.y, r.levels, beta);
    if (g.cwiseAbs().maxCoeff() / n <= opts.tol) {
      converged = true;
      break;
    }
    const Eigen::MatrixXd info = information(d.x, multinomial_probs(d.x, beta));
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() != Eigen::Success) throw NumericalError("singular information matrix during Newton iterations");
    Eigen::VectorXd gv(levels * p);
    for (Eigen::Index l = 0; l < levels; ++l) gv.segment(l * p, p) = g.row(l).transpose();
    const Eigen::VectorXd step = llt.solve(gv);
    double t = 1.0;
    Eigen::MatrixXd next;
    double ll_next = ll;
    for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
      next = beta;
      for (Eigen::Index l = 0; l < levels; ++l) next.row(l) += t * step.segment(l * p, p).transpose();
      ll_next = multinomial_loglik(d.x, d.y, r.levels, next);
      if (ll_next >= ll - 1e-12 * std::abs(ll)) break;
    }
    beta = next;
    ll = ll_next;
    if (beta.cwiseAbs().maxCoeff() > opts.separation_bound) {
      throw NumericalError(fmt::format("quasi-complete separation: |beta| exceeded {}", opts.separation_bound));
    }
  }
  if (!converged) {
    throw NumericalError(fmt::format("multinomial regression did not converge in {} iterations", opts.max_iter));
  }
  // The gradient test can pass while coefficients are still diverging under
  // separation (it decays exponentially); catch that from the fitted values.
  {
    const Eigen::MatrixXd probs = multinomial_probs(d.x, beta);
    const auto cols = compact_outcomes(d.y, r.levels);
    Eigen::Index certain = 0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      if (probs(i, cols[static_cast<std::size_t>(i)]) > 1.0 - opts.certainty_eps) ++certain;
    }
    if (certain > 0) {
      throw NumericalError(fmt::format(
          "quasi-complete separation: {} of {} observations fitted with probability numerically 1", certain,
          probs.rows()));
    }
  }
  r.beta = beta;
  r.log_likelihood = ll;
  const Eigen::MatrixXd info = information(d.x, multinomial_probs(d.x, beta));
  Eigen::FullPivLU<Eigen::MatrixXd> lu(info);
  if (!lu.isInvertible()) throw NumericalError("singular information matrix at the optimum");
  const Eigen::MatrixXd cov = lu.inverse();
  r.se.resize(levels, p);
  r.z.resize(levels, p);
  r.p.resize(levels, p);
  for (Eigen::Index l = 0; l < levels; ++l) {
    for (Eigen::Index j = 0; j < p; ++j) {
      r.se(l, j) = std::sqrt(cov(l * p + j, l * p + j));
      r.z(l, j) = beta(l, j) / r.se(l, j);
      r.p(l, j) = std::erfc(std::abs(r.z(l, j)) / std::sqrt(2.0));
    }
  }
  return r;
}

std::string effect_label(const std::string& column) {
  auto base = [](std::string_view c) -> std::string {
    if (c == "d_AE") return "AE Dist.";
    if (c == "d_IE") return "IE Dist.";
    return std::string(c);
  };
  const auto colon = column.find(':');
  if (colon == std::string::npos) return base(column);
  return base(std::string_view(column).substr(0, colon)) + " x " + base(std::string_view(column).substr(colon + 1));
}

TsvTable regression_table(const std::string& segment, const RegressionResult& r, double alpha) {
  TsvTable t;
  t.columns = {"Segment", "Accent", "Effect", "beta", "p"};
  for (std::size_t l = 0; l < r.levels.size(); ++l) {
    const auto li = static_cast<Eigen::Index>(l);
    for (std::size_t j = 0; j < r.columns.size(); ++j) {
      const auto& c = r.columns[j];
      if (c == "(Intercept)") continue;
      const auto ji = static_cast<Eigen::Index>(j);
      if (c.find(':') != std::string::npos && !(r.p(li, ji) < alpha)) continue;
      t.rows.push_back({segment, std::string(to_string(static_cast<AccentLabel>(r.levels[l]))), effect_label(c),
                        format_fixed(r.beta(li, ji), 3), format_fixed(r.p(li, ji), 4)});
    }
  }
  return t;
}

Eigen::MatrixXd project_2d(const Eigen::MatrixXd& vectors) {
  if (vectors.rows() < 3) throw ValidationError("project_2d needs at least 3 vectors");
  const Eigen::MatrixXd c = vectors.rowwise() - vectors.colwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(c, Eigen::ComputeThinV);
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(vectors.cols(), 2);
  const Eigen::Index k = std::min<Eigen::Index>(2, svd.matrixV().cols());
  v.leftCols(k) = svd.matrixV().leftCols(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    Eigen::Index arg = 0;
    v.col(j).cwiseAbs().maxCoeff(&arg);
    if (v(arg, j) < 0) v.col(j) = -v.col(j);
  }
  return c * v;
}

}  // namespace segprobe
