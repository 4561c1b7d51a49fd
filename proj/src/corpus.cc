// src/corpus.cc

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

#include "segprobe/corpus.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "segprobe/error.h"

namespace segprobe {

std::string_view to_string(AccentLabel a) {
  switch (a) {
    case AccentLabel::NoNegligible: return "No/Negligible";
    case AccentLabel::Mild: return "Mild";
    case AccentLabel::Strong: return "Strong";
  }
  return "?";
}

AccentLabel parse_accent(std::string_view s) {
  s = trim(s);
  if (s == "No/Negligible" || s == "NoNegligible") return AccentLabel::NoNegligible;
  if (s == "Mild") return AccentLabel::Mild;
  if (s == "Strong") return AccentLabel::Strong;
  throw ParseError(fmt::format("unknown accent label '{}'", s));
}

std::string_view to_string(WordPosition p) {
  switch (p) {
    case WordPosition::Initial: return "Initial";
    case WordPosition::Medial: return "Medial";
    case WordPosition::Final: return "Final";
  }
  return "?";
}

WordPosition parse_position(std::string_view s) {
  s = trim(s);
  if (s == "Initial") return WordPosition::Initial;
  if (s == "Medial") return WordPosition::Medial;
  if (s == "Final") return WordPosition::Final;
  throw ParseError(fmt::format("unknown word position '{}'", s));
}

namespace {

struct Line {
  std::size_t number = 0;
  std::string text;
};

// Line-oriented cursor over a long-format TextGrid.
class TextGridReader {
 public:
  TextGridReader(std::istream& in, std::string source) : source_(std::move(source)) {
    std::string raw;
    std::size_t n = 0;
    while (std::getline(in, raw)) {
      ++n;
      if (n == 1 && raw.rfind("\xEF\xBB\xBF", 0) == 0) raw.erase(0, 3);
      auto t = trim(raw);
      if (!t.empty()) lines_.push_back({n, std::string(t)});
    }
  }

  bool done() const { return pos_ >= lines_.size(); }

  const Line& peek() const {
    if (done()) fail(last_line(), "unexpected end of file");
    return lines_[pos_];
  }

  const Line& next() {
    const Line& l = peek();
    ++pos_;
    return l;
  }

  // Reads `key = value` and returns the raw value.
  std::string expect_value(std::string_view key) {
    const Line& l = next();
    const auto eq = l.text.find('=');
    if (eq == std::string::npos || trim(std::string_view(l.text).substr(0, eq)) != key) {
      fail(l.number, fmt::format("expected '{} = ...', found '{}'", key, l.text));
    }
    return std::string(trim(std::string_view(l.text).substr(eq + 1)));
  }

  double expect_number(std::string_view key) {
    const std::size_t n = peek().number;
    auto v = expect_value(key);
    try {
      return parse_double(v, key);
    } catch (const ParseError&) {
      fail(n, fmt::format("'{}' is not a number: '{}'", key, v));
    }
  }

  long long expect_count(std::string_view key) {
    const std::size_t n = peek().number;
    auto v = expect_value(key);
    try {
      return parse_int(v, key);
    } catch (const ParseError&) {
      fail(n, fmt::format("'{}' is not an integer: '{}'", key, v));
    }
  }

  std::string expect_string(std::string_view key) {
    const std::size_t n = peek().number;
    return unquote(expect_value(key), n);
  }

  void expect_prefix(std::string_view prefix) {
    const Line& l = next();
    if (l.text.rfind(prefix, 0) != 0) {
      fail(l.number, fmt::format("expected '{}', found '{}'", prefix, l.text));
    }
  }

  [[noreturn]] void fail(std::size_t line, const std::string& msg) const {
    throw ParseError(fmt::format("{}:{}: {}", source_, line, msg));
  }

  std::size_t last_line() const { return lines_.empty() ? 0 : lines_.back().number; }

 private:
  std::string unquote(const std::string& v, std::size_t line) const {
    if (v.size() < 2 || v.front() != '"' || v.back() != '"') {
      fail(line, fmt::format("expected a quoted string, found '{}'", v));
    }
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      out += v[i];
      if (v[i] == '"' && i + 2 < v.size() && v[i + 1] == '"') ++i;  // "" escape
    }
    return out;
  }

  std::string source_;
  std::vector<Line> lines_;
  std::size_t pos_ = 0;
};

struct ParsedTier {
  std::string name;
  std::size_t line = 0;
  std::vector<Interval> intervals;
};

void check_tier_order(const ParsedTier& tier, const std::string& source) {
  constexpr double kSlack = 1e-9;
  for (std::size_t i = 0; i < tier.intervals.size(); ++i) {
    const auto& iv = tier.intervals[i];
    if (iv.t_end < iv.t_start) {
      throw ParseError(fmt::format("{}:{}: tier '{}': interval {} ends before it starts",
                                   source, tier.line, tier.name, i + 1));
    }
    if (i > 0 && iv.t_start < tier.intervals[i - 1].t_end - kSlack) {
      throw ParseError(fmt::format("{}:{}: tier '{}': overlapping intervals {} and {}", source,
                                   tier.line, tier.name, i, i + 1));
    }
  }
}

const Interval* word_at(const std::vector<Interval>& words, double t) {
  for (const auto& w : words) {
    if (t >= w.t_start && t < w.t_end) return &w;
  }
  return nullptr;
}

}  // namespace

UtteranceAlignment parse_textgrid(std::istream& in, std::string utterance_id,
                                  const std::string& source, const AlignmentOptions& opts) {
  TextGridReader r(in, source);
  if (r.done()) r.fail(0, "malformed header: empty file");
  {
    const Line& l = r.next();
    if (l.text.find("ooTextFile") == std::string::npos) {
      r.fail(l.number, "malformed header: expected File type = \"ooTextFile\"");
    }
    const Line& c = r.next();
    if (c.text.find("\"TextGrid\"") == std::string::npos) {
      r.fail(c.number, "malformed header: expected Object class = \"TextGrid\"");
    }
  }

  UtteranceAlignment a;
  a.utterance_id = std::move(utterance_id);
  a.xmin = r.expect_number("xmin");
  a.xmax = r.expect_number("xmax");
  {
    const Line& l = r.next();
    if (l.text.find("<exists>") == std::string::npos) {
      r.fail(l.number, "malformed header: expected 'tiers? <exists>'");
    }
  }
  const long long n_tiers = r.expect_count("size");
  r.expect_prefix("item []");

  std::vector<ParsedTier> tiers;
  for (long long k = 0; k < n_tiers; ++k) {
    r.expect_prefix("item [");
    ParsedTier tier;
    tier.line = r.peek().number;
    const std::string cls = r.expect_string("class");
    tier.name = r.expect_string("name");
    r.expect_number("xmin");
    r.expect_number("xmax");
    const Line& size_line = r.next();
    const bool interval_tier = cls == "IntervalTier";
    const std::string_view expected = interval_tier ? "intervals: size" : "points: size";
    if (size_line.text.rfind(expected, 0) != 0) {
      r.fail(size_line.number, fmt::format("tier '{}': expected '{} = N'", tier.name, expected));
    }
    const auto eq = size_line.text.find('=');
    const long long n = parse_int(std::string_view(size_line.text).substr(eq + 1), "size");
    for (long long i = 0; i < n; ++i) {
      if (interval_tier) {
        r.expect_prefix("intervals [");
        Interval iv;
        iv.t_start = r.expect_number("xmin");
        iv.t_end = r.expect_number("xmax");
        iv.label = r.expect_string("text");
        tier.intervals.push_back(std::move(iv));
      } else {
        r.expect_prefix("points [");
        r.expect_number("number");
        r.expect_string("mark");
      }
    }
    if (interval_tier) {
      check_tier_order(tier, source);
      tiers.push_back(std::move(tier));
    }
  }

  auto find_tier = [&](const std::string& name) -> ParsedTier& {
    for (auto& t : tiers) {
      if (t.name == name) return t;
    }
    throw ParseError(fmt::format("{}: missing tier '{}'", source, name));
  };
  ParsedTier& phones = find_tier(opts.phone_tier);
  ParsedTier& words = find_tier(opts.word_tier);

  const double eps = opts.nesting_tolerance;
  for (std::size_t i = 0; i < phones.intervals.size(); ++i) {
    const auto& p = phones.intervals[i];
    if (p.label.empty()) continue;
    const Interval* w = word_at(words.intervals, 0.5 * (p.t_start + p.t_end));
    if (w == nullptr || w->label.empty()) continue;
    if (p.t_start < w->t_start - eps || p.t_end > w->t_end + eps) {
      throw ParseError(fmt::format(
          "{}:{}: tier '{}': phone/word nesting violated: [{}] {}-{} crosses word '{}' {}-{}",
          source, phones.line, phones.name, p.label, p.t_start, p.t_end, w->label, w->t_start,
          w->t_end));
    }
  }

  a.phone_tier = std::move(phones.intervals);
  a.word_tier = std::move(words.intervals);
  return a;
}

UtteranceAlignment parse_textgrid(const std::filesystem::path& path,
                                  const AlignmentOptions& opts) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  return parse_textgrid(in, path.stem().string(), path.string(), opts);
}

namespace {

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    out += c;
    if (c == '"') out += '"';
  }
  out += '"';
  return out;
}

void write_tier(std::ostream& out, int index, const std::string& name,
                const std::vector<Interval>& ivs, double xmin, double xmax) {
  out << "    item [" << index << "]:\n";
  out << "        class = \"IntervalTier\"\n";
  out << "        name = " << quote(name) << "\n";
  out << "        xmin = " << format_exact(xmin) << "\n";
  out << "        xmax = " << format_exact(xmax) << "\n";
  out << "        intervals: size = " << ivs.size() << "\n";
  for (std::size_t i = 0; i < ivs.size(); ++i) {
    out << "        intervals [" << i + 1 << "]:\n";
    out << "            xmin = " << format_exact(ivs[i].t_start) << "\n";
    out << "            xmax = " << format_exact(ivs[i].t_end) << "\n";
    out << "            text = " << quote(ivs[i].label) << "\n";
  }
}

}  // namespace

void write_textgrid(std::ostream& out, const UtteranceAlignment& a, const AlignmentOptions& opts) {
  out << "File type = \"ooTextFile\"\n";
  out << "Object class = \"TextGrid\"\n\n";
  out << "xmin = " << format_exact(a.xmin) << "\n";
  out << "xmax = " << format_exact(a.xmax) << "\n";
  out << "tiers? <exists>\n";
  out << "size = 2\n";
  out << "item []:\n";
  write_tier(out, 1, opts.word_tier, a.word_tier, a.xmin, a.xmax);
  write_tier(out, 2, opts.phone_tier, a.phone_tier, a.xmin, a.xmax);
}

void write_textgrid(const std::filesystem::path& path, const UtteranceAlignment& a,
                    const AlignmentOptions& opts) {
  std::ostringstream os;
  write_textgrid(os, a, opts);
  write_file_atomic(path, os.str());
}

AccentLabel merge_ratings(std::span<const int> ratings) {
  if (ratings.empty()) throw ValidationError("merge_ratings: no ratings given");
  int m = 4;
  for (int r : ratings) {
    if (r < 1 || r > 4) {
      throw ValidationError(fmt::format("merge_ratings: rating {} outside [1,4]", r));
    }
    m = std::min(m, r);
  }
  switch (m) {
    case 1: return AccentLabel::NoNegligible;
    case 2: return AccentLabel::Mild;
    default: return AccentLabel::Strong;
  }
}

std::map<std::string, std::vector<int>> read_ratings(const std::filesystem::path& path) {
  const TsvTable t = read_tsv(path);
  const std::size_t id_col = t.column("utterance_id");
  std::map<std::string, std::vector<int>> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    std::vector<int> ratings;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == id_col || trim(row[c]).empty()) continue;
      const auto ctx = fmt::format("{} row {} column '{}'", path.string(), r + 1, t.columns[c]);
      ratings.push_back(static_cast<int>(parse_int(row[c], ctx)));
    }
    if (ratings.empty()) {
      throw ParseError(fmt::format("{}: utterance '{}' has no ratings", path.string(), row[id_col]));
    }
    if (!out.emplace(row[id_col], std::move(ratings)).second) {
      throw ParseError(fmt::format("{}: duplicate utterance '{}'", path.string(), row[id_col]));
    }
  }
  return out;
}

std::vector<PhoneToken> extract_tokens(const UtteranceAlignment& a,
                                       const std::set<std::string>& targets,
                                       std::optional<AccentLabel> accent,
                                       const AlignmentOptions& opts) {
  if (targets.empty()) throw ValidationError("extract_tokens: empty target set");
  const double eps = opts.nesting_tolerance;
  std::vector<PhoneToken> out;
  for (std::size_t i = 0; i < a.phone_tier.size(); ++i) {
    const auto& p = a.phone_tier[i];
    if (!targets.contains(p.label)) continue;

    std::size_t wi = a.word_tier.size();
    for (std::size_t k = 0; k < a.word_tier.size(); ++k) {
      const auto& w = a.word_tier[k];
      if (!w.label.empty() && p.t_start >= w.t_start - eps && p.t_end <= w.t_end + eps) {
        wi = k;
        break;
      }
    }
    if (wi == a.word_tier.size()) {
      throw ValidationError(fmt::format("{}: phone [{}] at {}-{} is not contained in any word",
                                        a.utterance_id, p.label, p.t_start, p.t_end));
    }
    const auto& w = a.word_tier[wi];
    const bool at_start = std::abs(p.t_start - w.t_start) <= eps;
    const bool at_end = std::abs(p.t_end - w.t_end) <= eps;

    PhoneToken t;
    t.token_id = fmt::format("{}:{}", a.utterance_id, i + 1);
    t.utterance_id = a.utterance_id;
    t.phone = p.label;
    t.word = w.label;
    t.word_id = fmt::format("{}#{}", a.utterance_id, wi + 1);
    if (at_start && at_end) {
      t.position = opts.whole_word_position;
    } else if (at_start) {
      t.position = WordPosition::Initial;
    } else if (at_end) {
      t.position = WordPosition::Final;
    } else {
      t.position = WordPosition::Medial;
    }
    t.t_start = p.t_start;
    t.t_end = p.t_end;
    t.accent = accent;
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<DistributionCell> tabulate_distribution(const std::vector<PhoneToken>& tokens,
                                                    const std::vector<std::string>& segments) {
  std::vector<DistributionCell> cells;
  for (const auto& s : segments) {
    for (auto pos : kWordPositions) {
      for (auto acc : kAccentLabels) cells.push_back({s, pos, acc, 0});
    }
  }
  for (const auto& t : tokens) {
    if (!t.accent) {
      throw ValidationError(fmt::format("tabulate_distribution: token {} has no accent", t.token_id));
    }
    auto it = std::find(segments.begin(), segments.end(), t.phone);
    if (it == segments.end()) {
      throw ValidationError(
          fmt::format("tabulate_distribution: token {} has untabulated phone [{}]", t.token_id, t.phone));
    }
    const std::size_t idx = static_cast<std::size_t>(it - segments.begin()) * 9 +
                            static_cast<std::size_t>(t.position) * 3 +
                            static_cast<std::size_t>(*t.accent);
    ++cells[idx].count;
  }
  return cells;
}

TsvTable distribution_table(const std::vector<DistributionCell>& cells) {
  TsvTable t;
  t.columns = {"segment", "position", "accent", "count"};
  for (const auto& c : cells) {
    t.rows.push_back({c.phone, std::string(to_string(c.position)), std::string(to_string(c.accent)),
                      std::to_string(c.count)});
  }
  return t;
}

TsvTable token_table(const std::vector<PhoneToken>& tokens) {
  TsvTable t;
  t.columns = {"token_id", "utterance_id", "phone",  "word",
               "word_id",  "position",     "t_start", "t_end", "accent"};
  for (const auto& k : tokens) {
    t.rows.push_back({k.token_id, k.utterance_id, k.phone, k.word, k.word_id,
                      std::string(to_string(k.position)), format_exact(k.t_start),
                      format_exact(k.t_end),
                      k.accent ? std::string(to_string(*k.accent)) : std::string("NA")});
  }
  return t;
}

std::vector<PhoneToken> tokens_from_table(const TsvTable& table) {
  const auto c_id = table.column("token_id");
  const auto c_utt = table.column("utterance_id");
  const auto c_phone = table.column("phone");
  const auto c_word = table.column("word");
  const auto c_wid = table.column("word_id");
  const auto c_pos = table.column("position");
  const auto c_t0 = table.column("t_start");
  const auto c_t1 = table.column("t_end");
  const auto c_acc = table.column("accent");
  std::vector<PhoneToken> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    PhoneToken t;
    t.token_id = row[c_id];
    t.utterance_id = row[c_utt];
    t.phone = row[c_phone];
    t.word = row[c_word];
    t.word_id = row[c_wid];
    t.position = parse_position(row[c_pos]);
    t.t_start = parse_double(row[c_t0], "t_start");
    t.t_end = parse_double(row[c_t1], "t_end");
    if (row[c_acc] != "NA") t.accent = parse_accent(row[c_acc]);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace segprobe
