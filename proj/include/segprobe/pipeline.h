// include/segprobe/pipeline.h

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

// Run configuration and the stage graph behind the command-line tool. Each
// stage reads the artifacts of the stages it depends on from the output
// directory and writes its own, stamped with the configuration hash.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "segprobe/corpus.h"
#include "segprobe/mfcc.h"
#include "segprobe/phonfeat.h"
#include "segprobe/probe.h"
#include "segprobe/svcca.h"

namespace segprobe {

struct CorpusPaths {
  std::filesystem::path textgrids;  // directory of <utterance>.TextGrid
  std::filesystem::path audio;      // directory of <utterance>.wav
  std::filesystem::path ratings;    // analysis corpus only
};

/// One externally extracted representation: SEGREP1 directories for the
/// analysis corpus and both baseline corpora.
struct RepresentationPaths {
  std::string name;
  std::filesystem::path analysis, ae, ie;
};

struct RunConfig {
  std::filesystem::path output_dir;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::vector<std::string> targets;  // non-native members of the segment pairs
  std::filesystem::path feature_mapping, segment_pairs;
  AlignmentOptions alignment;
  CorpusPaths analysis, baseline_ae, baseline_ie;
  std::vector<RepresentationPaths> representations;
  bool include_mfcc = true;
  MfccConfig mfcc;
  FeatureModelConfig phonet;
  std::vector<ProbeKind> probe_kinds = {ProbeKind::LogReg, ProbeKind::LinearSVM};
  ProbeConfig probe;
  CcaConfig cca;
  bool cca_pooled_baseline = true;
  std::size_t distance_cap = 2000;
  ProbeKind distance_probe = ProbeKind::LogReg;
  double alpha = 0.05;

  /// Canonical JSON of every result-affecting setting, and its FNV-1a hash.
  std::string canonical;
  std::string hash;

  /// Relative paths resolve against the config file's directory. Throws
  /// ValidationError for schema problems.
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& json_text, const std::filesystem::path& base_dir);

  /// Applies a seed override and recomputes the hash.
  void set_seed(std::uint64_t seed);
  /// Referenced inputs exist and every target has a segment pair.
  void validate() const;
};

std::string fnv1a_hex(std::string_view data);

struct RunOptions {
  bool force = false;
};

inline const std::vector<std::string> kStages = {"ingest", "mfcc",     "phonet-train", "phonet-score", "probe",
                                                 "svcca",  "distance", "regress",      "report"};

/// Direct dependencies of a stage.
std::vector<std::string> stage_dependencies(const std::string& stage);

/// Runs one stage. Returns false when it was already complete for this
/// configuration and was skipped. Missing upstream artifacts raise
/// DependencyError naming the stage that produces them.
bool run_stage(const RunConfig& cfg, const std::string& stage, const RunOptions& opts = {});

/// Runs every stage in dependency order, up to and including `until`.
void run_pipeline(const RunConfig& cfg, const RunOptions& opts = {}, const std::string& until = "report");

}  // namespace segprobe
