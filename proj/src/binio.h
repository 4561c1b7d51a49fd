// src/binio.h

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

// Little-endian scalar and float32 array packing shared by the binary
// formats.

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "segprobe/error.h"

namespace segprobe::binio {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xffu);
}

inline void put_u16(std::string& out, std::uint16_t v) {
  out += static_cast<char>(v & 0xffu);
  out += static_cast<char>(v >> 8);
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, &f, sizeof bits);
  put_u32(out, bits);
}

class Cursor {
 public:
  Cursor(std::string_view data, std::string source) : data_(data), source_(std::move(source)) {}

  std::string_view take(std::size_t n) {
    if (pos_ + n > data_.size()) {
      throw ParseError(source_ + ": truncated file (needed " + std::to_string(n) + " bytes at offset " +
                       std::to_string(pos_) + ")");
    }
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[i]);
    return v;
  }

  std::uint16_t u16() {
    auto s = take(2);
    return static_cast<std::uint16_t>(static_cast<unsigned char>(s[0]) |
                                      static_cast<unsigned char>(s[1]) << 8);
  }

  float f32() {
    const std::uint32_t bits = u32();
    float f = 0.0f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& source() const { return source_; }

 private:
  std::string_view data_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace segprobe::binio
