// src/mfcc.cc

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

#include "segprobe/mfcc.h"

#include <cmath>
#include <complex>

#include <fmt/format.h>
#include <unsupported/Eigen/FFT>

#include "segprobe/error.h"

namespace segprobe {

int MfccConfig::window_samples() const {
  return static_cast<int>(std::lround(window * sample_rate));
}

int MfccConfig::hop_samples() const { return static_cast<int>(std::lround(hop * sample_rate)); }

void MfccConfig::validate() const {
  if (sample_rate <= 0) throw ValidationError("mfcc: sample_rate must be positive");
  if (!(hop > 0.0) || window < hop) throw ValidationError("mfcc: need window >= hop > 0");
  if (hop_samples() < 1) throw ValidationError("mfcc: hop shorter than one sample");
  if (n_fft < window_samples()) {
    throw ValidationError(fmt::format("mfcc: n_fft {} shorter than window ({} samples)", n_fft,
                                      window_samples()));
  }
  if (n_mels < 1 || n_coeffs < 1 || n_coeffs > n_mels) {
    throw ValidationError("mfcc: need 1 <= n_coeffs <= n_mels");
  }
  if (preemphasis < 0.0 || preemphasis >= 1.0) {
    throw ValidationError("mfcc: preemphasis must lie in [0, 1)");
  }
  if (!(log_floor > 0.0)) throw ValidationError("mfcc: log_floor must be positive");
}

int frame_count(std::size_t n_samples, const MfccConfig& cfg) {
  const auto w = static_cast<std::size_t>(cfg.window_samples());
  const auto h = static_cast<std::size_t>(cfg.hop_samples());
  if (n_samples < w) return 0;
  return static_cast<int>((n_samples - w) / h + 1);
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges(const MfccConfig& cfg) {
  const double lo = hz_to_mel(0.0);
  const double hi = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> hz(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (std::size_t i = 0; i < hz.size(); ++i) {
    hz[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  }
  return hz;
}

}  // namespace

std::vector<double> mel_filter_centers(const MfccConfig& cfg) {
  auto edges = mel_edges(cfg);
  return {edges.begin() + 1, edges.end() - 1};
}

Eigen::MatrixXd mel_filterbank(const MfccConfig& cfg) {
  const auto edges = mel_edges(cfg);
  const int n_bins = cfg.n_fft / 2 + 1;
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(cfg.n_mels, n_bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      fb(m, k) = w;
    }
  }
  return fb;
}

Eigen::MatrixXd dct_matrix(int size) {
  Eigen::MatrixXd d(size, size);
  const double n = size;
  for (int k = 0; k < size; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int m = 0; m < size; ++m) {
      d(k, m) = scale * std::cos(M_PI * k * (m + 0.5) / n);
    }
  }
  return d;
}

FrameMatrix log_mel_energies(std::span<const double> signal, const MfccConfig& cfg) {
  cfg.validate();
  for (double x : signal) {
    if (!std::isfinite(x)) throw ValidationError("mfcc: non-finite sample in input signal");
  }
  const int n_frames = frame_count(signal.size(), cfg);
  const int win = cfg.window_samples();
  const int hop = cfg.hop_samples();
  const int n_bins = cfg.n_fft / 2 + 1;

  FrameMatrix out;
  out.data.resize(n_frames, cfg.n_mels);
  out.frame_times.resize(static_cast<std::size_t>(n_frames));
  if (n_frames == 0) return out;

  std::vector<double> emph(signal.size());
  emph[0] = signal[0];
  for (std::size_t i = 1; i < signal.size(); ++i) {
    emph[i] = signal[i] - cfg.preemphasis * signal[i - 1];
  }
  std::vector<double> hamming(static_cast<std::size_t>(win));
  for (int i = 0; i < win; ++i) {
    hamming[i] = win > 1 ? 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (win - 1)) : 1.0;
  }
  const Eigen::MatrixXd fb = mel_filterbank(cfg);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(static_cast<std::size_t>(cfg.n_fft));
  std::vector<std::complex<double>> spec;
  Eigen::VectorXd power(n_bins);
  for (int f = 0; f < n_frames; ++f) {
    const std::size_t start = static_cast<std::size_t>(f) * hop;
    std::fill(frame.begin(), frame.end(), 0.0);
    for (int i = 0; i < win; ++i) frame[i] = emph[start + i] * hamming[i];
    fft.fwd(spec, frame);
    for (int k = 0; k < n_bins; ++k) power[k] = std::norm(spec[k]);
    const Eigen::VectorXd energies = fb * power;
    for (int m = 0; m < cfg.n_mels; ++m) {
      out.data(f, m) = std::log(std::max(energies[m], cfg.log_floor));
    }
    out.frame_times[f] = (static_cast<double>(start) + 0.5 * win) / cfg.sample_rate;
  }
  return out;
}

FrameMatrix compute_mfcc(std::span<const double> signal, const MfccConfig& cfg) {
  FrameMatrix logmel = log_mel_energies(signal, cfg);
  const Eigen::MatrixXd dct = dct_matrix(cfg.n_mels).topRows(cfg.n_coeffs);
  FrameMatrix out;
  out.data = logmel.data * dct.transpose();
  out.frame_times = std::move(logmel.frame_times);
  return out;
}

}  // namespace segprobe
