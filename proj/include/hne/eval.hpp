// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "hne/params.hpp"
#include "hne/tensor.hpp"
#include "hne/tree.hpp"

namespace hne {

/// What the prefix outputs average: raw leaf logits (default) or their
/// softmax probabilities.
enum class Averaging { logits, probs };

std::string to_string(Averaging a);
Averaging averaging_from_string(const std::string& s);

struct EvalOptions {
  Averaging averaging = Averaging::logits;
  /// Keep per-node activations so the result can be extended later.
  bool keep_cache = true;
};

template <typename T>
struct EvalResult {
  std::size_t budget = 0;
  /// [batch, 2^budget, L], leaf n at position n.
  Tensor<T> per_leaf_logits;
  /// prefix_outputs[j] is the mean of the first 2^j leaves, j = 0..budget.
  std::vector<Tensor<T>> prefix_outputs;
  /// Output of every evaluated node, [batch, per-branch output extents...].
  std::map<NodeId, Tensor<T>> cache;
  Averaging averaging = Averaging::logits;
  /// Blocks executed to produce this result (including any reused result).
  std::size_t block_evaluations = 0;
  std::vector<std::size_t> groups_per_level;
  std::uint64_t revision = 0;
  std::uint64_t input_digest = 0;

  const Tensor<T>& output() const { return prefix_outputs.back(); }
};

/// FNV-1a digest of a tensor's shape and bytes.
template <typename T>
std::uint64_t tensor_digest(const Tensor<T>& t);

/// Logits [batch, L] of one leaf model, applying the blocks on its
/// root-to-leaf path.
template <typename T>
Tensor<T> forward_leaf(const ParamStore<T>& store, std::size_t leaf, const Tensor<T>& x);

/// Evaluates each node of sub-ensemble b once, one parameter set at a time.
template <typename T>
EvalResult<T> forward_subensemble_sequential(const ParamStore<T>& store, std::size_t budget,
                                             const Tensor<T>& x, const EvalOptions& opts = {});

/// Evaluates sub-ensemble b in a single grouped pass over the levels.
template <typename T>
EvalResult<T> forward_packed(const ParamStore<T>& store, std::size_t budget, const Tensor<T>& x,
                             const EvalOptions& opts = {});

/// Extends a cached result to budget b+1, evaluating only the new nodes.
/// Throws StaleCacheError when the store or input changed since `prev`.
template <typename T>
EvalResult<T> extend_budget(EvalResult<T> prev, const ParamStore<T>& store, const Tensor<T>& x);

/// Row-wise argmax; ties go to the lowest class index.
template <typename T>
std::vector<int> predict(const Tensor<T>& outputs);

/// Fraction of rows whose prediction equals the label.
template <typename T>
double accuracy(const Tensor<T>& outputs, std::span<const int> labels);

/// Nodes in the order an anytime evaluation runs them: the path to leaf 0
/// first, then for each b the nodes that budget b adds.
std::vector<NodeId> anytime_schedule(const TreeSpec& spec);

/// Block-by-block evaluation that can be stopped after any block and still
/// report the largest completed prefix output.
template <typename T>
class AnytimeSession {
 public:
  AnytimeSession(const ParamStore<T>& store, Tensor<T> x, Averaging averaging = Averaging::logits);

  /// Runs the next block; false when everything has been evaluated.
  bool step();
  /// Runs blocks until budget b is complete.
  void run_to(std::size_t budget);
  std::size_t blocks_done() const noexcept { return done_; }
  /// Largest budget whose nodes are all evaluated, if any.
  std::optional<std::size_t> completed_budget() const;
  /// Output of the largest completed budget. Throws if none completed yet.
  EvalResult<T> result() const;

 private:
  const ParamStore<T>& store_;
  Tensor<T> x_;
  Averaging averaging_;
  std::vector<NodeId> schedule_;
  std::vector<std::size_t> budget_end_;
  std::size_t done_ = 0;
  std::map<NodeId, Tensor<T>> cache_;
};

}  // namespace hne
