// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hne/tree.hpp"

namespace hne {

// FLOP conventions: one multiply-accumulate is 2 FLOPs, a bias add 1 FLOP
// per output, batch norm at inference 2 FLOPs per element (scale and
// shift), ReLU and pooling 1 FLOP per element. Counts are per sample.

std::uint64_t flops_grouped_linear(std::size_t groups, std::size_t c_in, std::size_t c_out,
                                   bool bias);
std::uint64_t flops_conv2d(std::size_t groups, std::size_t c_in, std::size_t c_out,
                           std::size_t kernel, std::size_t out_h, std::size_t out_w, bool bias);
std::uint64_t flops_batch_norm(std::size_t elements);
std::uint64_t flops_relu(std::size_t elements);

/// Cost of one parameter set of `level` (its layers plus, at the last
/// level, the classifier head).
std::uint64_t flops_level(const TreeSpec& spec, std::size_t level);

/// Reduced fraction of unsigned integers.
struct Ratio {
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  static Ratio reduced(std::uint64_t num, std::uint64_t den);
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Ratio&) const = default;
};

std::string to_string(const Ratio& r);

/// Cost of N = 2^B independent (B+1)-block models over the cost of the
/// tree: (B+1) / (2 - 2^-B), computed exactly.
Ratio complexity_ratio_exact(std::size_t depth);
double complexity_ratio(std::size_t depth);

struct FlopReport {
  std::size_t depth = 0;
  Topology topology = Topology::hierarchical;
  std::map<NodeId, std::uint64_t> per_node;
  /// Cumulative cost of sub-ensemble b, b = 0..B.
  std::vector<std::uint64_t> per_budget;
  /// Cost of evaluating every node once.
  std::uint64_t t_hne = 0;
  /// Cost of evaluating every leaf model on its own, nothing shared.
  std::uint64_t t_ind = 0;
  Ratio measured;
  Ratio analytic;
  /// All blocks cost the same, the assumption behind the analytic ratio.
  bool uniform = false;
};

/// Walks the tree and sums block costs. With `block_cost` every block costs
/// that much instead of its FLOP count.
FlopReport flop_report(const TreeSpec& spec, std::optional<std::uint64_t> block_cost = {});

/// Report for a binary tree of depth B whose blocks all cost `block_cost`.
FlopReport uniform_cost_report(std::size_t depth, std::uint64_t block_cost);

/// Empty when the report is internally consistent; otherwise the first
/// violated property (per_budget increasing, per_budget[B] = T_HNE =
/// sum of per_node, and for a uniform-cost binary tree measured = analytic
/// ratio).
std::optional<std::string> verify_cost_model(const FlopReport& report);

}  // namespace hne
