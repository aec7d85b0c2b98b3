// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hne/ops.hpp"
#include "hne/tensor.hpp"
#include "hne/tree.hpp"

namespace hne {

enum class ParamKind { weight, head_weight, bias, bn_scale, bn_shift };

/// True for parameters that take weight decay (batch-norm scale/shift do not).
bool decays(ParamKind kind);

struct ParamLayout {
  std::string name;
  ParamKind kind;
  /// Shape of one node's slice; the stored tensor multiplies axis 0 by the
  /// number of nodes at the level, so node k owns the k-th contiguous slice.
  Shape per_set;
  std::size_t fan_in = 1;
};

struct NormLayout {
  std::string name;
  std::size_t channels_per_set;
};

struct LevelLayout {
  std::vector<ParamLayout> params;
  std::vector<NormLayout> norms;
};

/// Parameter tensors and batch-norm layers of one level, in forward order.
LevelLayout level_layout(const TreeSpec& spec, std::size_t level);

template <typename T>
struct ParamTensor {
  std::string name;
  ParamKind kind;
  Tensor<T> value;
};

template <typename T>
struct NormState {
  std::string name;
  RunningStats<T> stats;
};

template <typename T>
struct LevelState {
  std::vector<ParamTensor<T>> params;
  std::vector<NormState<T>> norms;

  const ParamTensor<T>& param(std::string_view name) const;
  ParamTensor<T>& param(std::string_view name);
  const NormState<T>& norm(std::string_view name) const;
  NormState<T>& norm(std::string_view name);
};

/// Seed of node (level, index) derived from the run's master seed.
std::uint64_t derive_node_seed(std::uint64_t master_seed, std::size_t level,
                               std::size_t index);

/// Parameters of every tree node, stored level by level with one
/// contiguous slice per node.
///
/// Every construction, copy and touch() draws a fresh process-wide revision
/// number, so an evaluation cache can tell whether it was built from exactly
/// this state.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(TreeSpec spec, std::uint64_t master_seed, std::vector<LevelState<T>> levels);
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  /// Fan-in scaled uniform initialisation (Kaiming-uniform for layers
  /// followed by ReLU, 1/sqrt(fan_in) for the head and biases), each node
  /// drawing from its own seed.
  static ParamStore initialize(const TreeSpec& spec, std::uint64_t master_seed);

  const TreeSpec& spec() const noexcept { return spec_; }
  std::uint64_t master_seed() const noexcept { return master_seed_; }

  const std::vector<LevelState<T>>& levels() const noexcept { return levels_; }
  std::vector<LevelState<T>>& levels() noexcept { return levels_; }
  const LevelState<T>& level(std::size_t l) const { return levels_.at(l); }
  LevelState<T>& level(std::size_t l) { return levels_.at(l); }

  std::uint64_t node_seed(NodeId node) const;

  /// Views of a node's slices of every parameter tensor, in layout order.
  std::vector<std::pair<std::string, std::span<const T>>> node_params(NodeId node) const;

  /// Copies a node's parameters and running statistics onto another node of
  /// the same level.
  void copy_node(NodeId from, NodeId to);

  std::uint64_t revision() const noexcept { return revision_; }
  /// Call after mutating parameters or statistics in place.
  void touch();

  std::size_t parameter_count() const;

 private:
  TreeSpec spec_;
  std::uint64_t master_seed_ = 0;
  std::vector<LevelState<T>> levels_;
  std::uint64_t revision_ = 0;
};

/// Element-type conversion (e.g. to run a float store in 64-bit mode).
template <typename U, typename T>
ParamStore<U> convert_store(const ParamStore<T>& store);

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace hne
