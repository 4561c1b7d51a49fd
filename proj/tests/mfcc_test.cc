// tests/mfcc_test.cc

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

#include <cmath>
#include <complex>
#include <vector>

#include <doctest.h>

#include "segprobe/error.h"
#include "segprobe/mfcc.h"

using namespace segprobe;

namespace {

// Textbook pipeline with a direct O(N^2) DFT, for comparison with the FFT path.
Eigen::MatrixXd naive_mfcc(const std::vector<double>& x, const MfccConfig& c) {
  const int win = static_cast<int>(std::lround(c.window * c.sample_rate));
  const int hop = static_cast<int>(std::lround(c.hop * c.sample_rate));
  const int n_frames = x.size() < static_cast<std::size_t>(win) ? 0 : static_cast<int>((x.size() - win) / hop + 1);
  const int bins = c.n_fft / 2 + 1;
  auto mel = [](double f) { return 1127.0 * std::log(1.0 + f / 700.0); };
  auto inv = [](double m) { return 700.0 * (std::exp(m / 1127.0) - 1.0); };
  std::vector<double> edge(c.n_mels + 2);
  for (int i = 0; i < c.n_mels + 2; ++i) edge[i] = inv(mel(c.sample_rate / 2.0) * i / (c.n_mels + 1));
  Eigen::MatrixXd out(n_frames, c.n_coeffs);
  for (int f = 0; f < n_frames; ++f) {
    std::vector<double> fr(c.n_fft, 0.0);
    for (int i = 0; i < win; ++i) {
      const std::size_t t = static_cast<std::size_t>(f * hop + i);
      const double e = t == 0 ? x[0] : x[t] - c.preemphasis * x[t - 1];
      fr[i] = e * (0.54 - 0.46 * std::cos(2 * M_PI * i / (win - 1)));
    }
    std::vector<double> logmel(c.n_mels);
    for (int m = 0; m < c.n_mels; ++m) {
      double energy = 0.0;
      for (int k = 0; k < bins; ++k) {
        const double hz = static_cast<double>(k) * c.sample_rate / c.n_fft;
        double w = 0.0;
        if (hz > edge[m] && hz <= edge[m + 1]) w = (hz - edge[m]) / (edge[m + 1] - edge[m]);
        if (hz > edge[m + 1] && hz < edge[m + 2]) w = (edge[m + 2] - hz) / (edge[m + 2] - edge[m + 1]);
        if (w == 0.0) continue;
        std::complex<double> s = 0.0;
        for (int i = 0; i < c.n_fft; ++i) s += fr[i] * std::polar(1.0, -2 * M_PI * k * i / c.n_fft);
        energy += w * std::norm(s);
      }
      logmel[m] = std::log(std::max(energy, c.log_floor));
    }
    for (int q = 0; q < c.n_coeffs; ++q) {
      double s = 0.0;
      for (int m = 0; m < c.n_mels; ++m) s += logmel[m] * std::cos(M_PI * q * (m + 0.5) / c.n_mels);
      out(f, q) = s * std::sqrt((q == 0 ? 1.0 : 2.0) / c.n_mels);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("mel scale fixed points") {
  CHECK(hz_to_mel(0.0) == 0.0);
  CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
  CHECK(mel_to_hz(hz_to_mel(1234.5)) == doctest::Approx(1234.5).epsilon(1e-12));
}

TEST_CASE("DCT-II matrix is orthonormal") {
  const auto d = dct_matrix(40);
  CHECK((d * d.transpose() - Eigen::MatrixXd::Identity(40, 40)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("frame count and frame centers") {
  MfccConfig c;
  CHECK(c.window_samples() == 400);
  CHECK(c.hop_samples() == 160);
  CHECK(frame_count(399, c) == 0);
  CHECK(frame_count(400, c) == 1);
  CHECK(frame_count(16000, c) == (16000 - 400) / 160 + 1);
  std::vector<double> x(1000, 0.1);
  const auto f = compute_mfcc(x, c);
  REQUIRE(f.frame_times.size() == 4);
  CHECK(f.frame_times[1] == doctest::Approx((160 + 200) / 16000.0));
}

TEST_CASE("FFT path agrees with a direct DFT") {
  MfccConfig c;
  c.sample_rate = 8000;
  c.n_fft = 256;
  c.n_mels = 23;
  std::vector<double> x(1200);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.3 * i) + 0.5 * std::sin(0.05 * i * i / 100.0) + 0.01 * (i % 7);
  const auto got = compute_mfcc(x, c);
  const auto want = naive_mfcc(x, c);
  REQUIRE(got.data.rows() == want.rows());
  CHECK((got.data - want).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("a pure tone peaks in the filter around its frequency") {
  MfccConfig c;
  std::vector<double> x(4000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2 * M_PI * 1000.0 * i / c.sample_rate);
  const auto e = log_mel_energies(x, c);
  const auto centers = mel_filter_centers(c);
  Eigen::Index best = 0;
  e.data.row(5).maxCoeff(&best);
  // nearest center to 1 kHz in mel distance, within one filter
  std::size_t nearest = 0;
  for (std::size_t m = 0; m < centers.size(); ++m) {
    if (std::abs(hz_to_mel(centers[m]) - hz_to_mel(1000)) < std::abs(hz_to_mel(centers[nearest]) - hz_to_mel(1000))) nearest = m;
  }
  CHECK(std::abs(static_cast<int>(best) - static_cast<int>(nearest)) <= 1);
}

TEST_CASE("silence hits the log floor instead of -inf") {
  MfccConfig c;
  const auto e = log_mel_energies(std::vector<double>(800, 0.0), c);
  CHECK(e.data.maxCoeff() == doctest::Approx(std::log(c.log_floor)));
  CHECK(e.data.allFinite());
}

TEST_CASE("invalid configurations are rejected") {
  MfccConfig c;
  c.n_fft = 256;  // shorter than the 400-sample window
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.n_coeffs = 41;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.preemphasis = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  std::vector<double> bad(1000, 0.0);
  bad[10] = NAN;
  CHECK_THROWS_AS(compute_mfcc(bad, MfccConfig{}), ValidationError);
}

TEST_CASE("signals shorter than one window give no frames") {
  const auto f = compute_mfcc(std::vector<double>(399, 0.2), MfccConfig{});
  CHECK(f.data.rows() == 0);
  CHECK(f.frame_times.empty());
}
