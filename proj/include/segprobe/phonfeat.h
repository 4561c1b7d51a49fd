// include/segprobe/phonfeat.h

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

// Phonological-feature layer: the phone -> binary feature mapping, frame
// labelling, a shallow frame classifier that emits per-feature
// probabilities, and frame-averaged segment profiles.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "segprobe/corpus.h"
#include "segprobe/mfcc.h"
#include "segprobe/table.h"

namespace segprobe {

struct FeatureInventory {
  std::vector<std::string> names;

  std::size_t size() const { return names.size(); }
  /// Throws ValidationError for unknown names.
  std::size_t index_of(const std::string& name) const;
};

class FeatureMapping {
 public:
  FeatureMapping() = default;
  FeatureMapping(FeatureInventory inventory, std::map<std::string, std::vector<std::uint8_t>> rows);

  const FeatureInventory& inventory() const { return inventory_; }
  bool contains(const std::string& phone) const { return rows_.contains(phone); }
  /// Binary feature vector of a phone; throws ValidationError if unmapped.
  const std::vector<std::uint8_t>& features(const std::string& phone) const;
  std::vector<std::string> phones() const;
  /// Names of features where the phone is positive.
  std::vector<std::string> positive_features(const std::string& phone) const;

 private:
  FeatureInventory inventory_;
  std::map<std::string, std::vector<std::uint8_t>> rows_;
};

FeatureMapping load_feature_mapping(const std::filesystem::path& path);

/// One native/non-native pair with the features that define it.
struct SegmentPair {
  std::string native;
  std::string nonnative;
  std::vector<std::string> contrastive;
  std::vector<std::string> non_contrastive;

  /// Contrastive and non-contrastive features, alphabetically.
  std::vector<std::string> feature_list() const;
};

std::vector<SegmentPair> load_segment_pairs(const std::filesystem::path& path);

inline const std::set<std::string> kDefaultSilenceLabels = {"", "sil", "sp", "spn"};

/// Binary n_frames x n_features labels: each frame takes the features of the
/// phone whose interval contains its center; silence and gaps are all-zero.
Eigen::MatrixXd label_frames(const UtteranceAlignment& a, const FeatureMapping& m,
                             const std::vector<double>& frame_times,
                             const std::set<std::string>& silence = kDefaultSilenceLabels);

enum class FeatureOptimizer { Adam, GradientDescent };

struct FeatureModelConfig {
  int context = 5;  // frames stacked on each side
  int hidden = 128;
  int max_epochs = 30;
  int patience = 5;
  double learning_rate = 1e-3;
  int batch_size = 256;  // 0 = full batch
  FeatureOptimizer optimizer = FeatureOptimizer::Adam;
  double validation_fraction = 0.2;
  std::uint64_t seed = 1;
};

/// Feedforward frame classifier: stacked-context input, one tanh hidden
/// layer, independent sigmoid output per feature.
class FeatureModel {
 public:
  int context = 0;
  int frame_dim = 0;
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_scale;
  Eigen::MatrixXd w_hidden;  // hidden x input
  Eigen::VectorXd b_hidden;
  Eigen::MatrixXd w_out;  // features x hidden
  Eigen::VectorXd b_out;

  int n_features() const { return static_cast<int>(w_out.rows()); }
  int input_dim() const { return frame_dim * (2 * context + 1); }

  /// Per-frame probabilities, n_frames x n_features.
  Eigen::MatrixXd predict(const FrameMatrix& frames) const;

  /// Binary format: "PHONETL1", u32 version, u32 context, frame_dim, hidden,
  /// features, then little-endian float32 arrays input_mean, input_scale,
  /// w_hidden, b_hidden, w_out, b_out (row-major).
  void save(const std::filesystem::path& path) const;
  static FeatureModel load(const std::filesystem::path& path);
};

/// Rows are frames, each row the frame and its +-context neighbours
/// (edges replicate the first/last frame).
Eigen::MatrixXd stack_context(const Eigen::MatrixXd& frames, int context);

struct TrainingReport {
  std::vector<double> train_loss;  // per epoch, full training split
  std::vector<double> val_loss;
  int best_epoch = 0;
  std::vector<std::string> warnings;
};

/// Trains on utterance-level inputs; labels are the matching label_frames()
/// outputs. Returns the weights from the epoch with the best validation loss.
FeatureModel train_feature_model(const std::vector<FrameMatrix>& inputs,
                                 const std::vector<Eigen::MatrixXd>& labels,
                                 const FeatureModelConfig& cfg, TrainingReport* report = nullptr);

/// Mean summed-over-features binary cross-entropy of `probs` against labels.
double feature_loss(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& labels);

struct SegmentFeatureProfile {
  std::string token_id;
  Eigen::VectorXd probs;
};

/// Mean of the rows whose frame centers fall in [t_start, t_end).
Eigen::VectorXd average_covered_rows(const Eigen::MatrixXd& rows, const std::vector<double>& times,
                                     double t_start, double t_end);

std::vector<SegmentFeatureProfile> profiles_from_probs(const Eigen::MatrixXd& probs,
                                                       const std::vector<double>& frame_times,
                                                       const std::vector<PhoneToken>& tokens);

std::vector<SegmentFeatureProfile> score_segments(const FeatureModel& model,
                                                  const FrameMatrix& frames,
                                                  const std::vector<PhoneToken>& tokens);

struct FeatureScore {
  std::string feature;
  double accuracy = 0.0;  // percent
  double f1 = 0.0;        // percent
};

/// Frame-level accuracy and F1 at threshold 0.5. A feature with no positive
/// labels and no positive predictions scores F1 = 100.
std::vector<FeatureScore> evaluate_predictions(const Eigen::MatrixXd& probs,
                                               const Eigen::MatrixXd& labels,
                                               const FeatureInventory& inventory);

std::vector<FeatureScore> evaluate_features(const FeatureModel& model,
                                            const std::vector<FrameMatrix>& inputs,
                                            const std::vector<Eigen::MatrixXd>& labels,
                                            const FeatureInventory& inventory);

TsvTable feature_score_table(const std::vector<FeatureScore>& scores);

}  // namespace segprobe
