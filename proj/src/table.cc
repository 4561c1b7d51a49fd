// src/table.cc

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

#include "segprobe/table.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "segprobe/error.h"

namespace segprobe {

std::vector<std::string> split(std::string_view s, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(delim, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      return out;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string format_exact(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string format_fixed(double x, int digits) {
  if (std::isnan(x)) return "NA";
  // Avoid "-0.000" in reports.
  std::string s = fmt::format("{:.{}f}", x, digits);
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

double parse_double(std::string_view s, std::string_view context) {
  s = trim(s);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ParseError(fmt::format("{}: expected a number, got '{}'", context, s));
  }
  return v;
}

long long parse_int(std::string_view s, std::string_view context) {
  s = trim(s);
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ParseError(fmt::format("{}: expected an integer, got '{}'", context, s));
  }
  return v;
}

std::size_t TsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  throw ParseError(fmt::format("missing column '{}'", name));
}

bool TsvTable::has_column(std::string_view name) const {
  for (const auto& c : columns) {
    if (c == name) return true;
  }
  return false;
}

TsvTable parse_tsv(std::istream& in, const std::string& source) {
  TsvTable t;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen && line.rfind("#", 0) == 0) {
      t.comments.push_back(std::string(trim(std::string_view(line).substr(1))));
      continue;
    }
    if (line.empty()) continue;
    auto fields = split(line, '\t');
    if (!header_seen) {
      t.columns = std::move(fields);
      header_seen = true;
      continue;
    }
    if (fields.size() != t.columns.size()) {
      throw ParseError(fmt::format("{}:{}: expected {} fields, found {}", source, lineno,
                                   t.columns.size(), fields.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (!header_seen) throw ParseError(fmt::format("{}: missing header row", source));
  return t;
}

TsvTable read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  return parse_tsv(in, path.string());
}

void write_tsv(std::ostream& out, const TsvTable& table) {
  for (const auto& c : table.comments) out << "# " << c << '\n';
  out << join(table.columns, "\t") << '\n';
  for (const auto& r : table.rows) out << join(r, "\t") << '\n';
}

void write_tsv(const std::filesystem::path& path, const TsvTable& table) {
  std::ostringstream os;
  write_tsv(os, table);
  write_file_atomic(path, os.str());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write {}", tmp.string()));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(fmt::format("write failed: {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace segprobe
