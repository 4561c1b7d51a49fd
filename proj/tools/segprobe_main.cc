// tools/segprobe_main.cc

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

// segprobe: command-line driver for the accent-probing pipeline.
//
// Every subcommand takes the same run configuration; stages refuse to run
// before the stages they depend on and skip themselves when already done.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "segprobe/error.h"
#include "segprobe/log.h"
#include "segprobe/pipeline.h"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitDependency = 2;
constexpr int kExitNumerical = 3;

struct Common {
  std::string config;
  bool force = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string output_dir;
  std::string until = "report";
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Run configuration (JSON)")->required();
  sub->add_flag("--force", c.force, "Rerun even when the stage is up to date");
  sub->add_option("--seed", c.seed, "Override the configured seed");
  sub->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--output-dir", c.output_dir, "Override the configured output directory");
}

int run(const std::string& command, const Common& c) {
  auto cfg = segprobe::RunConfig::load(c.config);
  if (c.seed) cfg.set_seed(*c.seed);
  if (!c.output_dir.empty()) cfg.output_dir = std::filesystem::absolute(c.output_dir);
  if (c.jobs) {
    cfg.jobs = *c.jobs;
    cfg.probe.jobs = *c.jobs;
  }
  cfg.validate();
  segprobe::RunOptions opts;
  opts.force = c.force;
  if (command == "pipeline") {
    segprobe::run_pipeline(cfg, opts, c.until);
  } else {
    segprobe::run_stage(cfg, command, opts);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segprobe: probe speech representations for segment-level accent cues"};
  app.require_subcommand(1);
  Common common;
  for (const auto& stage : segprobe::kStages) {
    add_common(app.add_subcommand(stage, "Run the '" + stage + "' stage"), common);
  }
  auto* pipeline = app.add_subcommand("pipeline", "Run all stages in dependency order");
  add_common(pipeline, common);
  pipeline->add_option("--stage", common.until, "Stop after this stage")
      ->check(CLI::IsMember(segprobe::kStages));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, common);
  } catch (const segprobe::DependencyError& e) {
    std::cerr << "ERROR (segprobe) missing dependency `" << e.stage() << "`: " << e.what() << "\n";
    return kExitDependency;
  } catch (const segprobe::NumericalError& e) {
    std::cerr << "ERROR (segprobe) numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "ERROR (segprobe) " << e.what() << "\n";
    return kExitConfig;
  }
}
