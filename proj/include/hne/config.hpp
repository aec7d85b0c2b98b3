// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hne/data.hpp"
#include "hne/train.hpp"
#include "hne/tree.hpp"

namespace hne {

/// Where the samples come from.
///   gaussians  synthetic classes (classes/dims default to the tree's)
///   cifar10    data_batch_{1..5}.bin and test_batch.bin under `path`,
///              or explicit train_files / test_files
///   cifar100   train.bin and test.bin under `path`, or explicit files
struct DataConfig {
  std::string name = "gaussians";
  std::size_t classes = 0;
  std::size_t dims = 0;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 200;
  double separation = 2.0;
  std::uint64_t seed = 1234;
  std::string path;
  std::vector<std::string> train_files;
  std::vector<std::string> test_files;
};

struct ExperimentConfig {
  TreeSpec tree;
  DataConfig data;
  /// Includes the loss and eval sections.
  TrainConfig train;
  std::string output_dir;
};

/// Environment variable naming the directory relative output paths are
/// placed under.
inline constexpr const char* kOutputRootEnv = "HNE_OUTPUT_ROOT";

/// Parses a JSON experiment description. Unknown keys, type errors and
/// syntax errors raise ConfigError naming `origin` and the key path or line.
ExperimentConfig parse_experiment(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_experiment(const std::string& path);

/// Fully resolved configuration, defaults filled in.
nlohmann::json to_json(const ExperimentConfig& cfg);

DatasetPair load_data(const DataConfig& cfg, const TreeSpec& tree);

/// Output directory: the override if given, else the configured one; a
/// relative path is placed under $HNE_OUTPUT_ROOT when that is set.
std::string resolve_output_dir(const ExperimentConfig& cfg,
                               const std::optional<std::string>& override_dir = {});

}  // namespace hne
