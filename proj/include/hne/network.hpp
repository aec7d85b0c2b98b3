// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "hne/autodiff.hpp"
#include "hne/ops.hpp"
#include "hne/params.hpp"

namespace hne {

/// Puts the tensors of a ParamStore on a Graph, one leaf per stored tensor,
/// created on first use.
template <typename T>
class ParamBinding {
 public:
  /// Training binding; batch-norm running statistics may be updated.
  ParamBinding(Graph<T>& graph, ParamStore<T>& store);
  /// Read-only binding; only inference-mode batch norm is allowed.
  ParamBinding(Graph<T>& graph, const ParamStore<T>& store);

  Graph<T>& graph() noexcept { return graph_; }
  const ParamStore<T>& store() const noexcept { return store_; }
  const TreeSpec& spec() const noexcept { return store_.spec(); }

  /// Graph handle of parameter `index` of `level`.
  Var param(std::size_t level, std::size_t index);
  /// Handle by name, or an invalid Var when the level has no such tensor.
  Var find(std::size_t level, std::string_view name);
  RunningStats<T>& stats(std::size_t level, std::string_view name, BnMode mode);

  /// Bound handles, parallel to store().level(l).params (invalid if unused).
  const std::vector<Var>& bound(std::size_t level) const { return vars_.at(level); }

 private:
  Graph<T>& graph_;
  const ParamStore<T>& store_;
  ParamStore<T>* mutable_store_ = nullptr;
  std::vector<std::vector<Var>> vars_;
};

/// Applies the blocks of `level` to x, whose channel axis holds G groups
/// (one per parameter set set_offset .. set_offset+G-1). Returns the level
/// output with the same G groups; the last level yields logits [batch, G*L].
template <typename T>
Var apply_level(ParamBinding<T>& binding, std::size_t level, Var x, std::size_t set_offset,
                BnMode mode);

struct PackedTrace {
  /// Output of every level, channel groups in node-index order.
  std::vector<Var> level_outputs;
  std::vector<std::size_t> groups_per_level;
  /// Leaf logits [batch, 2^b * L], leaf n in group n.
  Var logits;
};

/// One pass over the levels evaluating all nodes of sub-ensemble `budget`,
/// replicating channel groups wherever the node count grows.
template <typename T>
PackedTrace packed_forward(ParamBinding<T>& binding, Var x, std::size_t budget, BnMode mode);

}  // namespace hne
