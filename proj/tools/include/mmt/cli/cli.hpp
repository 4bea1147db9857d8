// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mmt/training.hpp"

namespace mmt::cli {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kConfigError = 2,
  kDataError = 3,
  kRuntimeError = 4,
};

/// Run configuration document:
/// {
///   "manifest": "data/manifest.json",      // relative to this file
///   "output_dir": "runs/tiny",             // relative to this file
///   "checkpoint": "runs/tiny/seed-0/checkpoint.mmtc",  // optional, for eval
///   "seeds": [0, 1, 2],
///   "ablation": ["encoder=none"],          // KEY=VALUE overrides of "train"
///   "eval_split": "test",
///   "train": { ...TrainConfig fields, optional "preset"... }
/// }
struct RunConfig {
  std::filesystem::path manifest;
  std::filesystem::path output_dir;
  std::filesystem::path checkpoint;
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::string> ablation;
  data::Split eval_split = data::Split::test;
  TrainConfig train;

  /// ConfigError when seeds is empty or the manifest path does not exist.
  void validate() const;
};

/// Parses a run config; relative paths resolve against `base_dir`.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
/// Resolved echo (absolute paths, ablations already applied to "train").
std::string run_config_to_json(const RunConfig& cfg);

/// Entry point shared by the executable and the tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace mmt::cli
