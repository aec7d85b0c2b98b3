// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace hne {

// Subcommand entry points. Each returns the process exit code: 0 on
// success, 1 on a runtime failure (divergence, bad data), 2 on a usage or
// configuration error. Results go to `out`, diagnostics to `err`.

struct TrainArgs {
  std::string config;
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
};
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

struct EvaluateArgs {
  std::string config;
  std::string checkpoint;
};
/// CSV budget_b,models,accuracy,diversity on the configured test split.
int cmd_evaluate(const EvaluateArgs& args, std::ostream& out, std::ostream& err);

struct AnytimeArgs {
  std::string checkpoint;
  std::optional<std::size_t> budget;
  /// Per-sample FLOP limit; picks the largest budget that fits.
  std::optional<std::uint64_t> flop_limit;
  /// CSV of samples, one per line.
  std::optional<std::string> input;
  /// Experiment config whose test split is used when no input is given.
  std::optional<std::string> config;
  std::optional<std::size_t> limit;
  /// Also extend the evaluation by one budget, reusing cached blocks.
  bool extend = false;
};
/// CSV sample,budget,prediction (plus rows for budget+1 with --extend).
int cmd_anytime(const AnytimeArgs& args, std::ostream& out, std::ostream& err);

struct FlopsArgs {
  std::string config;
  /// Give every block this cost instead of its FLOP count.
  std::optional<std::uint64_t> uniform_cost;
};
/// CSV budget_b,models,flops,cumulative_fraction with '#' trailer lines.
int cmd_flops(const FlopsArgs& args, std::ostream& out, std::ostream& err);

struct CompareArgs {
  std::string config;
  std::size_t seeds = 3;
  std::size_t jobs = 1;
  std::optional<std::string> output;
};
int cmd_compare_distillation(const CompareArgs& args, std::ostream& out, std::ostream& err);

}  // namespace hne
