// include/segprobe/corpus.h

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

// Forced-alignment ingest: TextGrid tiers, rating merge, and target-token
// extraction with word-position bookkeeping.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "segprobe/table.h"

namespace segprobe {

enum class AccentLabel : std::uint8_t { NoNegligible = 0, Mild = 1, Strong = 2 };
inline constexpr std::array<AccentLabel, 3> kAccentLabels = {
    AccentLabel::NoNegligible, AccentLabel::Mild, AccentLabel::Strong};

std::string_view to_string(AccentLabel a);
AccentLabel parse_accent(std::string_view s);

enum class WordPosition : std::uint8_t { Initial = 0, Medial = 1, Final = 2 };
inline constexpr std::array<WordPosition, 3> kWordPositions = {
    WordPosition::Initial, WordPosition::Medial, WordPosition::Final};

std::string_view to_string(WordPosition p);
WordPosition parse_position(std::string_view s);

struct Interval {
  std::string label;  // empty for silence
  double t_start = 0.0;
  double t_end = 0.0;
};

struct UtteranceAlignment {
  std::string utterance_id;
  double xmin = 0.0;
  double xmax = 0.0;
  std::vector<Interval> phone_tier;
  std::vector<Interval> word_tier;
};

struct AlignmentOptions {
  std::string phone_tier = "phones";
  std::string word_tier = "words";
  /// Allowed disagreement between tier boundaries, seconds.
  double nesting_tolerance = 0.010;
  /// Position assigned to a phone that spans its whole word.
  WordPosition whole_word_position = WordPosition::Initial;
};

/// Parses a Praat long-format ("ooTextFile") TextGrid. The utterance id is
/// the file stem.
UtteranceAlignment parse_textgrid(const std::filesystem::path& path,
                                  const AlignmentOptions& opts = {});
UtteranceAlignment parse_textgrid(std::istream& in, std::string utterance_id,
                                  const std::string& source, const AlignmentOptions& opts = {});

/// Long-format writer; times are written in shortest round-trip form.
void write_textgrid(std::ostream& out, const UtteranceAlignment& a,
                    const AlignmentOptions& opts = {});
void write_textgrid(const std::filesystem::path& path, const UtteranceAlignment& a,
                    const AlignmentOptions& opts = {});

/// Minimum rating wins; "very strong" (4) folds into Strong.
AccentLabel merge_ratings(std::span<const int> ratings);

/// utterance_id -> individual ratings. Columns: utterance_id, then one
/// column per rater.
std::map<std::string, std::vector<int>> read_ratings(const std::filesystem::path& path);

struct PhoneToken {
  std::string token_id;
  std::string utterance_id;
  std::string phone;
  std::string word;
  std::string word_id;
  WordPosition position = WordPosition::Initial;
  double t_start = 0.0;
  double t_end = 0.0;
  std::optional<AccentLabel> accent;  // unset for baseline-corpus tokens
};

std::vector<PhoneToken> extract_tokens(const UtteranceAlignment& a,
                                       const std::set<std::string>& targets,
                                       std::optional<AccentLabel> accent,
                                       const AlignmentOptions& opts = {});

struct DistributionCell {
  std::string phone;
  WordPosition position;
  AccentLabel accent;
  std::size_t count = 0;
};

/// Counts per (segment, position, accent); every combination of the given
/// segments is present, zeros included. Tokens must carry an accent.
std::vector<DistributionCell> tabulate_distribution(const std::vector<PhoneToken>& tokens,
                                                    const std::vector<std::string>& segments);

TsvTable distribution_table(const std::vector<DistributionCell>& cells);

TsvTable token_table(const std::vector<PhoneToken>& tokens);
std::vector<PhoneToken> tokens_from_table(const TsvTable& table);

}  // namespace segprobe
