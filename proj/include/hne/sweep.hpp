// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hne/data.hpp"
#include "hne/losses.hpp"
#include "hne/train.hpp"
#include "hne/tree.hpp"

namespace hne {

struct SweepVariant {
  std::string name;
  LossConfig loss;
};

/// independent, structured, hierarchical, codistill at alpha 0.1 and 0.5.
/// Temperature, T^2 scaling and the hierarchical alpha come from `base`.
std::vector<SweepVariant> distillation_variants(const LossConfig& base);

struct SweepRun {
  std::size_t variant = 0;
  std::uint64_t seed = 0;
  EvalSummary summary;
};

/// Trains every (variant, seed) pair, `jobs` at a time, and evaluates each
/// on the test split after the last epoch. Results come back in (variant,
/// seed) order whatever the parallelism.
std::vector<SweepRun> run_sweep(const DatasetPair& data, const TreeSpec& spec,
                                const TrainConfig& base, const std::vector<SweepVariant>& variants,
                                const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1);

/// Median (mean of the middle two for even counts); NaN entries ignored.
double median(std::vector<double> values);

struct SweepRow {
  std::string variant;
  double alpha = 0.0;
  std::size_t budget = 0;
  std::size_t models = 1;
  std::uint64_t flops = 0;
  double median_accuracy = 0.0;
  double median_diversity = 0.0;
  std::size_t seeds = 0;
};

/// Per variant and budget medians over seeds, with per-sample FLOPs.
std::vector<SweepRow> summarize_sweep(const std::vector<SweepRun>& runs,
                                      const std::vector<SweepVariant>& variants,
                                      const TreeSpec& spec);

/// "# schema: hne.compare/1" then
/// variant,alpha,budget_b,models,flops,median_accuracy,median_diversity,seeds
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace hne
