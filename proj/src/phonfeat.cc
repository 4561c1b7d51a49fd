// src/phonfeat.cc

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

#include "segprobe/phonfeat.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "binio.h"
#include "segprobe/error.h"
#include "segprobe/log.h"

namespace segprobe {

std::size_t FeatureInventory::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw ValidationError(fmt::format("unknown phonological feature '{}'", name));
}

FeatureMapping::FeatureMapping(FeatureInventory inventory,
                               std::map<std::string, std::vector<std::uint8_t>> rows)
    : inventory_(std::move(inventory)), rows_(std::move(rows)) {
  std::set<std::string> seen(inventory_.names.begin(), inventory_.names.end());
  if (seen.size() != inventory_.names.size()) {
    throw ValidationError("feature inventory has duplicate names");
  }
  for (const auto& [phone, v] : rows_) {
    if (v.size() != inventory_.size()) {
      throw ValidationError(fmt::format("mapping row [{}] has {} features, expected {}", phone,
                                        v.size(), inventory_.size()));
    }
  }
}

const std::vector<std::uint8_t>& FeatureMapping::features(const std::string& phone) const {
  auto it = rows_.find(phone);
  if (it == rows_.end()) throw ValidationError(fmt::format("phone [{}] missing from mapping", phone));
  return it->second;
}

std::vector<std::string> FeatureMapping::phones() const {
  std::vector<std::string> out;
  for (const auto& [p, _] : rows_) out.push_back(p);
  return out;
}

std::vector<std::string> FeatureMapping::positive_features(const std::string& phone) const {
  const auto& v = features(phone);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i]) out.push_back(inventory_.names[i]);
  }
  return out;
}

FeatureMapping load_feature_mapping(const std::filesystem::path& path) {
  const TsvTable t = read_tsv(path);
  if (t.columns.empty() || t.columns[0] != "phone") {
    throw ParseError(fmt::format("{}: first column must be 'phone'", path.string()));
  }
  FeatureInventory inv;
  inv.names.assign(t.columns.begin() + 1, t.columns.end());
  std::map<std::string, std::vector<std::uint8_t>> rows;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    std::vector<std::uint8_t> v;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] != "0" && row[c] != "1") {
        throw ParseError(fmt::format("{}: row {} ([{}]) column '{}': expected 0 or 1", path.string(),
                                     r + 1, row[0], t.columns[c]));
      }
      v.push_back(row[c] == "1" ? 1 : 0);
    }
    if (!rows.emplace(row[0], std::move(v)).second) {
      throw ParseError(fmt::format("{}: duplicate phone [{}]", path.string(), row[0]));
    }
  }
  return FeatureMapping(std::move(inv), std::move(rows));
}

std::vector<std::string> SegmentPair::feature_list() const {
  std::vector<std::string> out = contrastive;
  out.insert(out.end(), non_contrastive.begin(), non_contrastive.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<SegmentPair> load_segment_pairs(const std::filesystem::path& path) {
  const TsvTable t = read_tsv(path);
  const auto cn = t.column("native");
  const auto cnn = t.column("nonnative");
  const auto cc = t.column("contrastive");
  const auto cnc = t.column("non_contrastive");
  auto list = [](const std::string& s) {
    std::vector<std::string> out;
    for (auto& p : split(s, ',')) {
      auto v = std::string(trim(p));
      if (!v.empty()) out.push_back(std::move(v));
    }
    return out;
  };
  std::vector<SegmentPair> out;
  for (const auto& row : t.rows) {
    out.push_back({row[cn], row[cnn], list(row[cc]), list(row[cnc])});
  }
  return out;
}

Eigen::MatrixXd label_frames(const UtteranceAlignment& a, const FeatureMapping& m,
                             const std::vector<double>& frame_times,
                             const std::set<std::string>& silence) {
  std::set<std::string> missing;
  for (const auto& p : a.phone_tier) {
    if (!silence.contains(p.label) && !m.contains(p.label)) missing.insert(p.label);
  }
  if (!missing.empty()) {
    std::vector<std::string> names;
    for (const auto& p : missing) names.push_back("[" + p + "]");
    throw ValidationError(fmt::format("{}: phones missing from feature mapping: {}", a.utterance_id,
                                      join(names, " ")));
  }
  const auto n_feat = static_cast<Eigen::Index>(m.inventory().size());
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(frame_times.size()), n_feat);
  std::size_t k = 0;  // phone cursor; frame times are increasing
  for (std::size_t f = 0; f < frame_times.size(); ++f) {
    const double t = frame_times[f];
    while (k < a.phone_tier.size() && a.phone_tier[k].t_end <= t) ++k;
    if (k == a.phone_tier.size()) break;
    const auto& p = a.phone_tier[k];
    if (t < p.t_start || silence.contains(p.label)) continue;
    const auto& v = m.features(p.label);
    for (Eigen::Index j = 0; j < n_feat; ++j) y(static_cast<Eigen::Index>(f), j) = v[j];
  }
  return y;
}

Eigen::MatrixXd stack_context(const Eigen::MatrixXd& frames, int context) {
  const Eigen::Index n = frames.rows();
  const Eigen::Index d = frames.cols();
  const int width = 2 * context + 1;
  Eigen::MatrixXd out(n, d * width);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int o = -context; o <= context; ++o) {
      const Eigen::Index src = std::clamp<Eigen::Index>(i + o, 0, n - 1);
      out.block(i, (o + context) * d, 1, d) = frames.row(src);
    }
  }
  return out;
}

namespace {

constexpr double kFixedHeadMargin = 1e-6;

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) {
    return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  });
}

// Summed-over-features BCE from logits, averaged over rows.
double logit_loss(const Eigen::MatrixXd& z, const Eigen::MatrixXd& y) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double v = z(i, j);
      const double softplus = v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
      total += softplus - y(i, j) * v;
    }
  }
  return z.rows() > 0 ? total / static_cast<double>(z.rows()) : 0.0;
}

struct Params {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
};

struct Forward {
  Eigen::MatrixXd hidden;
  Eigen::MatrixXd logits;
};

Forward forward(const Params& p, const Eigen::MatrixXd& x) {
  Forward f;
  f.hidden = ((x * p.w1.transpose()).rowwise() + p.b1.transpose()).array().tanh().matrix();
  f.logits = (f.hidden * p.w2.transpose()).rowwise() + p.b2.transpose();
  return f;
}

struct AdamSlot {
  Eigen::MatrixXd m, v;
  void init(Eigen::Index r, Eigen::Index c) {
    m = Eigen::MatrixXd::Zero(r, c);
    v = Eigen::MatrixXd::Zero(r, c);
  }
};

void apply_update(Eigen::MatrixXd& w, const Eigen::MatrixXd& g, AdamSlot& s,
                  const FeatureModelConfig& cfg, long step) {
  if (cfg.optimizer == FeatureOptimizer::GradientDescent) {
    w -= cfg.learning_rate * g;
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  s.m = b1 * s.m + (1 - b1) * g;
  s.v = b2 * s.v + (1 - b2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  w.array() -= cfg.learning_rate * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps);
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& idx,
                            std::size_t begin, std::size_t end) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(end - begin), m.cols());
  for (std::size_t i = begin; i < end; ++i) out.row(static_cast<Eigen::Index>(i - begin)) = m.row(idx[i]);
  return out;
}

}  // namespace

Eigen::MatrixXd FeatureModel::predict(const FrameMatrix& frames) const {
  if (frames.data.rows() == 0) return Eigen::MatrixXd(0, n_features());
  if (frames.data.cols() != frame_dim) {
    throw ValidationError(fmt::format("feature model expects {}-dim frames, got {}", frame_dim,
                                      frames.data.cols()));
  }
  Eigen::MatrixXd x = stack_context(frames.data, context);
  x = (x.rowwise() - input_mean.transpose()).array().rowwise() / input_scale.transpose().array();
  Params p{w_hidden, b_hidden, w_out, b_out};
  return sigmoid(forward(p, x).logits);
}

double feature_loss(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
      const double p = std::clamp(probs(i, j), 1e-12, 1.0 - 1e-12);
      total -= labels(i, j) * std::log(p) + (1.0 - labels(i, j)) * std::log(1.0 - p);
    }
  }
  return probs.rows() > 0 ? total / static_cast<double>(probs.rows()) : 0.0;
}

FeatureModel train_feature_model(const std::vector<FrameMatrix>& inputs,
                                 const std::vector<Eigen::MatrixXd>& labels,
                                 const FeatureModelConfig& cfg, TrainingReport* report) {
  if (inputs.size() != labels.size()) {
    throw ValidationError(fmt::format("train_feature_model: {} inputs but {} label matrices",
                                      inputs.size(), labels.size()));
  }
  if (inputs.empty()) throw ValidationError("train_feature_model: no training data");
  if (cfg.hidden < 1 || cfg.context < 0 || cfg.max_epochs < 1 || cfg.patience < 1) {
    throw ValidationError("train_feature_model: invalid configuration");
  }
  const Eigen::Index frame_dim = inputs[0].data.cols();
  const Eigen::Index n_feat = labels[0].cols();
  Eigen::Index total = 0;
  for (std::size_t u = 0; u < inputs.size(); ++u) {
    if (inputs[u].data.cols() != frame_dim || labels[u].cols() != n_feat ||
        labels[u].rows() != inputs[u].data.rows()) {
      throw ValidationError(fmt::format("train_feature_model: shape mismatch in utterance {}", u));
    }
    total += inputs[u].data.rows();
  }
  if (total < 2) throw ValidationError("train_feature_model: need at least two frames");

  std::mt19937_64 rng(cfg.seed);

  // Validation split by utterance when possible so context windows do not
  // straddle the split.
  std::vector<std::size_t> utt(inputs.size());
  std::iota(utt.begin(), utt.end(), 0);
  std::shuffle(utt.begin(), utt.end(), rng);
  std::vector<bool> is_val(inputs.size(), false);
  const bool by_utterance = inputs.size() >= 2;
  if (by_utterance && cfg.validation_fraction > 0) {
    const auto n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.validation_fraction * inputs.size())));
    for (std::size_t i = 0; i < std::min(n_val, inputs.size() - 1); ++i) is_val[utt[i]] = true;
  }

  const int width = 2 * cfg.context + 1;
  const Eigen::Index in_dim = frame_dim * width;
  std::vector<Eigen::MatrixXd> stacked(inputs.size());
  for (std::size_t u = 0; u < inputs.size(); ++u) stacked[u] = stack_context(inputs[u].data, cfg.context);

  auto concat = [&](bool val) {
    Eigen::Index rows = 0;
    for (std::size_t u = 0; u < inputs.size(); ++u) {
      if (is_val[u] == val) rows += stacked[u].rows();
    }
    Eigen::MatrixXd x(rows, in_dim), y(rows, n_feat);
    Eigen::Index r = 0;
    for (std::size_t u = 0; u < inputs.size(); ++u) {
      if (is_val[u] != val) continue;
      x.middleRows(r, stacked[u].rows()) = stacked[u];
      y.middleRows(r, stacked[u].rows()) = labels[u];
      r += stacked[u].rows();
    }
    return std::pair{x, y};
  };
  auto [x_train, y_train] = concat(false);
  auto [x_val, y_val] = concat(true);
  if (!by_utterance && cfg.validation_fraction > 0) {
    // Single utterance: hold out a random subset of frames.
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(x_train.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.validation_fraction * idx.size())));
    x_val = gather_rows(x_train, idx, 0, n_val);
    y_val = gather_rows(y_train, idx, 0, n_val);
    Eigen::MatrixXd xt = gather_rows(x_train, idx, n_val, idx.size());
    Eigen::MatrixXd yt = gather_rows(y_train, idx, n_val, idx.size());
    x_train = std::move(xt);
    y_train = std::move(yt);
  }

  FeatureModel model;
  model.context = cfg.context;
  model.frame_dim = static_cast<int>(frame_dim);
  model.input_mean = x_train.colwise().mean().transpose();
  model.input_scale =
      ((x_train.rowwise() - model.input_mean.transpose()).array().square().colwise().sum() /
       static_cast<double>(x_train.rows()))
          .sqrt()
          .transpose();
  for (Eigen::Index j = 0; j < in_dim; ++j) {
    if (model.input_scale[j] < 1e-12) model.input_scale[j] = 1.0;
  }
  auto normalize = [&](Eigen::MatrixXd& x) {
    x = (x.rowwise() - model.input_mean.transpose()).array().rowwise() /
        model.input_scale.transpose().array();
  };
  normalize(x_train);
  if (x_val.rows() > 0) normalize(x_val);

  // Heads with single-class training labels become constant predictors.
  Eigen::VectorXd fixed_logit = Eigen::VectorXd::Zero(n_feat);
  std::vector<bool> fixed(static_cast<std::size_t>(n_feat), false);
  TrainingReport local_report;
  TrainingReport& rep = report ? *report : local_report;
  rep = {};
  const Eigen::VectorXd pos_rate = y_train.colwise().mean().transpose();
  for (Eigen::Index j = 0; j < n_feat; ++j) {
    if (pos_rate[j] == 0.0 || pos_rate[j] == 1.0) {
      fixed[j] = true;
      const double p = pos_rate[j] == 1.0 ? 1.0 - kFixedHeadMargin : kFixedHeadMargin;
      fixed_logit[j] = std::log(p / (1.0 - p));
      auto msg = fmt::format("feature {} has single-class training labels ({}); using a constant predictor",
                             j, pos_rate[j] == 1.0 ? "all 1" : "all 0");
      log_warn("{}", msg);
      rep.warnings.push_back(std::move(msg));
    }
  }

  Params p;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double a1 = std::sqrt(6.0 / static_cast<double>(in_dim + cfg.hidden));
  const double a2 = std::sqrt(6.0 / static_cast<double>(cfg.hidden + n_feat));
  p.w1 = Eigen::MatrixXd::NullaryExpr(cfg.hidden, in_dim, [&] { return a1 * unit(rng); });
  p.b1 = Eigen::VectorXd::Zero(cfg.hidden);
  p.w2 = Eigen::MatrixXd::NullaryExpr(n_feat, cfg.hidden, [&] { return a2 * unit(rng); });
  p.b2.resize(n_feat);
  for (Eigen::Index j = 0; j < n_feat; ++j) {
    if (fixed[j]) {
      p.w2.row(j).setZero();
      p.b2[j] = fixed_logit[j];
    } else {
      const double r = std::clamp(pos_rate[j], 1e-3, 1.0 - 1e-3);
      p.b2[j] = std::log(r / (1.0 - r));
    }
  }

  AdamSlot s_w1, s_b1, s_w2, s_b2;
  s_w1.init(p.w1.rows(), p.w1.cols());
  s_b1.init(p.b1.rows(), 1);
  s_w2.init(p.w2.rows(), p.w2.cols());
  s_b2.init(p.b2.rows(), 1);

  Eigen::VectorXd head_mask(n_feat);
  for (Eigen::Index j = 0; j < n_feat; ++j) head_mask[j] = fixed[j] ? 0.0 : 1.0;

  const auto n_train = static_cast<std::size_t>(x_train.rows());
  const std::size_t batch =
      cfg.batch_size <= 0 ? n_train : std::min<std::size_t>(n_train, static_cast<std::size_t>(cfg.batch_size));
  std::vector<Eigen::Index> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  Params best = p;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  long step = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    if (batch < n_train) std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b0 = 0; b0 < n_train; b0 += batch) {
      const std::size_t b1 = std::min(n_train, b0 + batch);
      const bool full = b0 == 0 && b1 == n_train && batch == n_train;
      const Eigen::MatrixXd xb = full ? x_train : gather_rows(x_train, order, b0, b1);
      const Eigen::MatrixXd yb = full ? y_train : gather_rows(y_train, order, b0, b1);
      const Forward f = forward(p, xb);
      Eigen::MatrixXd dz = (sigmoid(f.logits) - yb) / static_cast<double>(xb.rows());
      dz = dz * head_mask.asDiagonal();
      const Eigen::MatrixXd g_w2 = dz.transpose() * f.hidden;
      const Eigen::VectorXd g_b2 = dz.colwise().sum().transpose();
      const Eigen::MatrixXd dh =
          (dz * p.w2).cwiseProduct((1.0 - f.hidden.array().square()).matrix());
      const Eigen::MatrixXd g_w1 = dh.transpose() * xb;
      const Eigen::VectorXd g_b1 = dh.colwise().sum().transpose();
      ++step;
      apply_update(p.w1, g_w1, s_w1, cfg, step);
      Eigen::MatrixXd b1m = p.b1;
      apply_update(b1m, g_b1, s_b1, cfg, step);
      p.b1 = b1m;
      apply_update(p.w2, g_w2, s_w2, cfg, step);
      Eigen::MatrixXd b2m = p.b2;
      apply_update(b2m, g_b2, s_b2, cfg, step);
      p.b2 = b2m;
    }

    const double train_loss = logit_loss(forward(p, x_train).logits, y_train);
    const double val_loss = x_val.rows() > 0 ? logit_loss(forward(p, x_val).logits, y_val) : train_loss;
    rep.train_loss.push_back(train_loss);
    rep.val_loss.push_back(val_loss);
    log_debug("feature model epoch {}: train {:.6f} val {:.6f}", epoch + 1, train_loss, val_loss);
    if (!std::isfinite(train_loss)) throw NumericalError("feature model training diverged");
    if (val_loss < best_val) {
      best_val = val_loss;
      best = p;
      rep.best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  model.w_hidden = std::move(best.w1);
  model.b_hidden = std::move(best.b1);
  model.w_out = std::move(best.w2);
  model.b_out = std::move(best.b2);
  return model;
}

namespace {

constexpr std::string_view kModelMagic = "PHONETL1";
constexpr std::uint32_t kModelVersion = 1;

void put_array(std::string& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) binio::put_f32(out, static_cast<float>(m(i, j)));
  }
}

Eigen::MatrixXd get_array(binio::Cursor& c, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = c.f32();
  }
  return m;
}

}  // namespace

void FeatureModel::save(const std::filesystem::path& path) const {
  std::string out(kModelMagic);
  binio::put_u32(out, kModelVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(context));
  binio::put_u32(out, static_cast<std::uint32_t>(frame_dim));
  binio::put_u32(out, static_cast<std::uint32_t>(w_hidden.rows()));
  binio::put_u32(out, static_cast<std::uint32_t>(w_out.rows()));
  put_array(out, input_mean.transpose());
  put_array(out, input_scale.transpose());
  put_array(out, w_hidden);
  put_array(out, b_hidden.transpose());
  put_array(out, w_out);
  put_array(out, b_out.transpose());
  write_file_atomic(path, out);
}

FeatureModel FeatureModel::load(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  binio::Cursor c(bytes, path.string());
  if (c.take(kModelMagic.size()) != kModelMagic) {
    throw ParseError(fmt::format("{}: not a feature model (bad magic)", path.string()));
  }
  const auto version = c.u32();
  if (version != kModelVersion) {
    throw ParseError(fmt::format("{}: unsupported model version {}", path.string(), version));
  }
  FeatureModel m;
  m.context = static_cast<int>(c.u32());
  m.frame_dim = static_cast<int>(c.u32());
  const Eigen::Index hidden = c.u32();
  const Eigen::Index feats = c.u32();
  const Eigen::Index in_dim = m.input_dim();
  m.input_mean = get_array(c, 1, in_dim).transpose();
  m.input_scale = get_array(c, 1, in_dim).transpose();
  m.w_hidden = get_array(c, hidden, in_dim);
  m.b_hidden = get_array(c, 1, hidden).transpose();
  m.w_out = get_array(c, feats, hidden);
  m.b_out = get_array(c, 1, feats).transpose();
  if (c.remaining() != 0) {
    throw ParseError(fmt::format("{}: {} trailing bytes after model", path.string(), c.remaining()));
  }
  return m;
}

Eigen::VectorXd average_covered_rows(const Eigen::MatrixXd& rows, const std::vector<double>& times,
                                     double t_start, double t_end) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(rows.cols());
  std::size_t n = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] >= t_start && times[i] < t_end) {
      sum += rows.row(static_cast<Eigen::Index>(i)).transpose();
      ++n;
    }
  }
  if (n == 0) {
    throw ValidationError(
        fmt::format("segment shorter than frame hop: no frame center in [{}, {})", t_start, t_end));
  }
  return sum / static_cast<double>(n);
}

std::vector<SegmentFeatureProfile> profiles_from_probs(const Eigen::MatrixXd& probs,
                                                       const std::vector<double>& frame_times,
                                                       const std::vector<PhoneToken>& tokens) {
  std::vector<SegmentFeatureProfile> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    try {
      out.push_back({t.token_id, average_covered_rows(probs, frame_times, t.t_start, t.t_end)});
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("token {}: {}", t.token_id, e.what()));
    }
  }
  return out;
}

std::vector<SegmentFeatureProfile> score_segments(const FeatureModel& model,
                                                  const FrameMatrix& frames,
                                                  const std::vector<PhoneToken>& tokens) {
  return profiles_from_probs(model.predict(frames), frames.frame_times, tokens);
}

std::vector<FeatureScore> evaluate_predictions(const Eigen::MatrixXd& probs,
                                               const Eigen::MatrixXd& labels,
                                               const FeatureInventory& inventory) {
  if (probs.rows() != labels.rows() || probs.cols() != labels.cols() ||
      probs.cols() != static_cast<Eigen::Index>(inventory.size())) {
    throw ValidationError("evaluate_predictions: shape mismatch");
  }
  std::vector<FeatureScore> out;
  for (Eigen::Index j = 0; j < probs.cols(); ++j) {
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      const bool pred = probs(i, j) >= 0.5;
      const bool truth = labels(i, j) >= 0.5;
      if (pred && truth) ++tp;
      else if (pred) ++fp;
      else if (truth) ++fn;
      else ++tn;
    }
    const double n = tp + fp + fn + tn;
    FeatureScore s;
    s.feature = inventory.names[static_cast<std::size_t>(j)];
    s.accuracy = n > 0 ? 100.0 * (tp + tn) / n : 0.0;
    s.f1 = (tp + fp + fn) > 0 ? 100.0 * 2 * tp / (2 * tp + fp + fn) : 100.0;
    out.push_back(s);
  }
  return out;
}

std::vector<FeatureScore> evaluate_features(const FeatureModel& model,
                                            const std::vector<FrameMatrix>& inputs,
                                            const std::vector<Eigen::MatrixXd>& labels,
                                            const FeatureInventory& inventory) {
  if (inputs.size() != labels.size()) throw ValidationError("evaluate_features: size mismatch");
  Eigen::Index rows = 0;
  for (const auto& l : labels) rows += l.rows();
  Eigen::MatrixXd probs(rows, model.n_features()), y(rows, model.n_features());
  Eigen::Index r = 0;
  for (std::size_t u = 0; u < inputs.size(); ++u) {
    const auto n = labels[u].rows();
    probs.middleRows(r, n) = model.predict(inputs[u]);
    y.middleRows(r, n) = labels[u];
    r += n;
  }
  return evaluate_predictions(probs, y, inventory);
}

TsvTable feature_score_table(const std::vector<FeatureScore>& scores) {
  TsvTable t;
  t.columns = {"feature", "accuracy", "f1"};
  for (const auto& s : scores) {
    t.rows.push_back({s.feature, format_fixed(s.accuracy, 2), format_fixed(s.f1, 2)});
  }
  return t;
}

}  // namespace segprobe
