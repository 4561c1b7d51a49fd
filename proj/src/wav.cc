// src/wav.cc

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

#include "segprobe/wav.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>

#include <fmt/format.h>

#include "segprobe/error.h"
#include "segprobe/table.h"

namespace segprobe {

namespace {

std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
std::uint16_t le16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }

void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s += static_cast<char>((v >> (8 * i)) & 0xff);
}
void put16(std::string& s, std::uint16_t v) {
  s += static_cast<char>(v & 0xff);
  s += static_cast<char>(v >> 8);
}

}  // namespace

PcmAudio read_wav(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto* d = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  auto fail = [&](const std::string& why) -> PcmAudio {
    throw ParseError(fmt::format("{}: {}", path.string(), why));
  };
  if (n < 12 || std::memcmp(d, "RIFF", 4) != 0 || std::memcmp(d + 8, "WAVE", 4) != 0) {
    return fail("not a RIFF/WAVE file");
  }
  PcmAudio out;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= n) {
    const std::uint32_t size = le32(d + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > n) return fail("truncated chunk");
    if (std::memcmp(d + pos, "fmt ", 4) == 0) {
      if (size < 16) return fail("short fmt chunk");
      const auto format = le16(d + body);
      const auto channels = le16(d + body + 2);
      const auto bits = le16(d + body + 14);
      if (format != 1) return fail("only PCM (format 1) is supported");
      if (channels != 1) return fail(fmt::format("expected mono audio, found {} channels", channels));
      if (bits != 16) return fail(fmt::format("expected 16-bit samples, found {}", bits));
      out.sample_rate = static_cast<int>(le32(d + body + 4));
      have_fmt = true;
    } else if (std::memcmp(d + pos, "data", 4) == 0) {
      if (!have_fmt) return fail("data chunk before fmt chunk");
      out.samples.resize(size / 2);
      for (std::size_t i = 0; i < out.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(le16(d + body + 2 * i));
        out.samples[i] = v / 32768.0;
      }
      return out;
    }
    pos = body + size + (size & 1);
  }
  return fail("no data chunk");
}

void write_wav(const std::filesystem::path& path, const PcmAudio& audio) {
  const auto n = static_cast<std::uint32_t>(audio.samples.size());
  std::string s;
  s.reserve(44 + 2 * n);
  s += "RIFF";
  put32(s, 36 + 2 * n);
  s += "WAVEfmt ";
  put32(s, 16);
  put16(s, 1);
  put16(s, 1);
  put32(s, static_cast<std::uint32_t>(audio.sample_rate));
  put32(s, static_cast<std::uint32_t>(audio.sample_rate) * 2);
  put16(s, 2);
  put16(s, 16);
  s += "data";
  put32(s, 2 * n);
  for (double x : audio.samples) {
    const double c = std::clamp(x, -1.0, 1.0);
    const auto v = static_cast<std::int16_t>(std::lround(std::clamp(c * 32768.0, -32768.0, 32767.0)));
    put16(s, static_cast<std::uint16_t>(v));
  }
  write_file_atomic(path, s);
}

}  // namespace segprobe
