// include/segprobe/repstore.h

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

// SEGREP1 representation container: a directory holding a text manifest and
// one binary file per utterance with all layers concatenated.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "segprobe/corpus.h"

namespace segprobe {

using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Maps frame index k to its center time offset + k * hop.
struct FrameClock {
  double hop = 0.02;
  double offset = 0.01;

  static FrameClock centered(double hop) { return {hop, 0.5 * hop}; }
  double center(Eigen::Index k) const { return offset + static_cast<double>(k) * hop; }
};

struct RepUtterance {
  std::string utterance_id;
  std::size_t n_frames = 0;
  std::string file;
  std::size_t offset = 0;  // payload start within file
  std::size_t size = 0;    // payload bytes
};

struct RepManifest {
  std::string model_id;
  std::size_t n_layers = 0;
  std::size_t dim = 0;
  FrameClock clock;
  int layer_base = 0;  // index the producer gives to the first stored layer
  std::vector<RepUtterance> utterances;

  const RepUtterance* find(const std::string& utterance_id) const;
};

struct LayerMatrix {
  std::size_t layer = 0;
  FloatMatrix data;  // n_frames x dim
};

class SegrepReader {
 public:
  /// Parses and validates the manifest; payloads are read on demand.
  explicit SegrepReader(std::filesystem::path dir);

  const RepManifest& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }

  std::vector<LayerMatrix> read_utterance(const std::string& utterance_id) const;
  LayerMatrix read_layer(const std::string& utterance_id, std::size_t layer) const;

 private:
  std::filesystem::path dir_;
  RepManifest manifest_;
};

/// Writes a SEGREP1 directory. Holds `<dir>/.lock` for its lifetime.
class SegrepWriter {
 public:
  SegrepWriter(std::filesystem::path dir, std::string model_id, std::size_t n_layers,
               std::size_t dim, FrameClock clock, int layer_base = 0);
  ~SegrepWriter();
  SegrepWriter(const SegrepWriter&) = delete;
  SegrepWriter& operator=(const SegrepWriter&) = delete;

  void add(const std::string& utterance_id, const std::vector<FloatMatrix>& layers);
  /// Writes the manifest. Called by the destructor if not called explicitly.
  void finish();

 private:
  std::filesystem::path dir_;
  RepManifest manifest_;
  bool finished_ = false;
};

struct SegmentVector {
  std::string token_id;
  std::size_t layer = 0;
  Eigen::VectorXd v;
};

/// Mean of the rows whose frame centers fall in [t_start, t_end).
SegmentVector segment_vector(const LayerMatrix& m, const PhoneToken& token, const FrameClock& clock);

}  // namespace segprobe

namespace segprobe {

/// Segment vectors of every token at every layer: one n_tokens x dim matrix
/// per layer, rows in token order. Each utterance payload is read once.
std::vector<Eigen::MatrixXd> segment_matrices(const SegrepReader& reader,
                                              const std::vector<PhoneToken>& tokens);

}  // namespace segprobe
