// src/log.cc

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

#include "segprobe/log.h"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <string>

namespace segprobe {

namespace {

LogLevel level_from_env() {
  const char* v = std::getenv("SEGPROBE_LOG");
  if (v == nullptr) return LogLevel::Warn;
  const std::string s(v);
  if (s == "error") return LogLevel::Error;
  if (s == "info") return LogLevel::Info;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Warn;
}

std::atomic<int>& level_slot() {
  static std::atomic<int> level{static_cast<int>(level_from_env())};
  return level;
}

}  // namespace

LogLevel log_level() { return static_cast<LogLevel>(level_slot().load()); }
void set_log_level(LogLevel level) { level_slot().store(static_cast<int>(level)); }

void log_message(LogLevel level, std::string_view msg) {
  static constexpr const char* kTags[] = {"ERROR", "WARNING", "LOG", "DEBUG"};
  std::fprintf(stderr, "%s (segprobe) %.*s\n", kTags[static_cast<int>(level)],
               static_cast<int>(msg.size()), msg.data());
}

}  // namespace segprobe
