// include/segprobe/mfcc.h

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

// MFCC front end: pre-emphasis, Hamming window, power spectrum, HTK mel
// filterbank, floored log, orthonormal DCT-II.

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace segprobe {

struct MfccConfig {
  int sample_rate = 16000;
  double window = 0.025;  // seconds
  double hop = 0.010;     // seconds
  int n_fft = 512;
  int n_mels = 40;
  int n_coeffs = 13;
  double preemphasis = 0.97;
  double log_floor = 1e-10;

  int window_samples() const;
  int hop_samples() const;
  /// Throws ValidationError when the invariants between fields do not hold.
  void validate() const;
};

struct FrameMatrix {
  Eigen::MatrixXd data;             // n_frames x n_coeffs
  std::vector<double> frame_times;  // frame centers, seconds
};

/// floor((N - window) / hop) + 1 for N >= window, else 0.
int frame_count(std::size_t n_samples, const MfccConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Center frequencies (Hz) of the triangular mel filters.
std::vector<double> mel_filter_centers(const MfccConfig& cfg);
/// n_mels x (n_fft/2 + 1) triangular weights over FFT bin frequencies.
Eigen::MatrixXd mel_filterbank(const MfccConfig& cfg);
/// Orthonormal DCT-II, size x size (row k is basis function k).
Eigen::MatrixXd dct_matrix(int size);

/// Floored log mel energies per frame (the stage before the DCT).
FrameMatrix log_mel_energies(std::span<const double> signal, const MfccConfig& cfg);
FrameMatrix compute_mfcc(std::span<const double> signal, const MfccConfig& cfg);

}  // namespace segprobe
