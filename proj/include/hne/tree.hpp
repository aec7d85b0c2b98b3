// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hne/tensor.hpp"

namespace hne {

enum class BlockKind { linear, conv };

/// One level of the tree: `reps` stacked layers applied by every node of
/// that level. The deepest level also carries the classifier head.
struct LevelSpec {
  BlockKind kind = BlockKind::linear;
  std::size_t reps = 1;
  std::size_t width = 16;
  /// Stride of the first layer (conv only).
  std::size_t stride = 1;
  /// Kernel extent, 1 or 3 (conv only).
  std::size_t kernel = 3;
  /// Depthwise 3x3 followed by pointwise 1x1 (conv only).
  bool separable = false;
  bool batch_norm = false;
  bool bias = true;

  bool operator==(const LevelSpec&) const = default;
};

/// How parameter sets are shared between the leaf models.
///   hierarchical  binary tree, 2^level sets at each level
///   multibranch   one shared set below split_level, N independent sets from it
///   independent   N sets at every level (no sharing)
enum class Topology { hierarchical, multibranch, independent };

struct TreeSpec {
  /// B; the ensemble has 2^B leaf models of B+1 blocks each.
  std::size_t depth = 0;
  std::vector<LevelSpec> levels;
  std::size_t classes = 2;
  /// Per-sample input extents: [features] or [channels, height, width].
  Shape input;
  Topology topology = Topology::hierarchical;
  std::size_t split_level = 0;

  std::size_t leaves() const { return std::size_t{1} << depth; }
  /// Number of parameter sets (tree nodes) at `level`.
  std::size_t sets_at(std::size_t level) const;
  /// Node index at `level` on the path of `leaf`.
  std::size_t node_index(std::size_t leaf, std::size_t level) const;
  /// Smallest leaf whose path passes through node (level, index).
  std::size_t first_leaf(std::size_t level, std::size_t index) const;
  /// Total number of parameter sets.
  std::size_t node_count() const;

  /// Throws ConfigError describing the first inconsistency.
  void validate() const;

  bool operator==(const TreeSpec&) const = default;
};

struct NodeId {
  std::uint32_t level = 0;
  std::uint32_t index = 0;
  auto operator<=>(const NodeId&) const = default;
};

std::string to_string(NodeId id);

/// Parent of a node in `spec`'s topology; level 0 has none (returns itself).
NodeId parent_of(const TreeSpec& spec, NodeId node);

/// The 2^b leaf models evaluated at budget b and the blocks they need.
struct SubEnsembleSpec {
  std::size_t budget = 0;
  std::vector<std::size_t> leaves;
  /// Ordered by level, then index.
  std::vector<NodeId> nodes;
  /// Distinct parameter sets used at each level; always a prefix 0..G-1.
  std::vector<std::size_t> groups_per_level;

  bool contains(NodeId node) const;
};

/// Depth-first leaf order. Leaf 0 (the all-left path) comes first and the
/// first 2^b entries are exactly the leaves of budget b.
std::vector<NodeId> leaf_order(const TreeSpec& spec);

/// Sub-ensemble for budget b: the height-b subtree that contains leaf 0,
/// together with the shared path from the root down to it.
SubEnsembleSpec subensemble(const TreeSpec& spec, std::size_t budget);

/// Closed form |nodes(b)| = (B - b) + (2^(b+1) - 1) for the binary tree.
std::size_t hierarchical_node_count(std::size_t depth, std::size_t budget);

/// Shared-backbone variant: levels below split_level keep one parameter set,
/// levels from split_level on have one set per leaf.
TreeSpec multibranch_variant(const TreeSpec& spec, std::size_t split_level);

/// Fully independent ensemble with the same per-model architecture.
TreeSpec independent_variant(const TreeSpec& spec);

/// Per-branch, per-sample input extents of `level`.
Shape level_input_shape(const TreeSpec& spec, std::size_t level);
/// Per-branch, per-sample output extents of `level` ([classes] for the last).
Shape level_output_shape(const TreeSpec& spec, std::size_t level);

nlohmann::json to_json(const TreeSpec& spec);
/// Strict parse: unknown keys are rejected, `path` prefixes diagnostics.
TreeSpec tree_spec_from_json(const nlohmann::json& j, const std::string& path = "tree");

std::string to_string(BlockKind kind);
std::string to_string(Topology topology);

}  // namespace hne
