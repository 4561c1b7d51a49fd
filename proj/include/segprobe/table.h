// include/segprobe/table.h

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

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace segprobe {

std::vector<std::string> split(std::string_view s, char delim);
std::string_view trim(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Shortest decimal string that parses back to exactly `x`.
std::string format_exact(double x);
/// Fixed-point with `digits` decimals; used for report tables.
std::string format_fixed(double x, int digits);

double parse_double(std::string_view s, std::string_view context);
long long parse_int(std::string_view s, std::string_view context);

/// Tab-separated table with optional leading `# ` comment lines.
struct TsvTable {
  std::vector<std::string> comments;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  /// Index of a named column; throws ParseError when absent.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
};

TsvTable read_tsv(const std::filesystem::path& path);
TsvTable parse_tsv(std::istream& in, const std::string& source);

void write_tsv(const std::filesystem::path& path, const TsvTable& table);
void write_tsv(std::ostream& out, const TsvTable& table);

/// Writes `content` to `path` through a temporary sibling and a rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

}  // namespace segprobe
