// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

#include "hne/autodiff.hpp"
#include "hne/tensor.hpp"

namespace hne {

enum class BnMode { train, infer };

/// Per-channel running statistics of a batch-norm layer. `recorded` turns on
/// after the first train-mode update; inference refuses to run before that.
template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;
  bool recorded = false;
};

struct BnOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  /// First weight group used by this call.
  std::size_t group_offset = 0;
};

// ---------------------------------------------------------------------------
// Plain tensor functions.

/// Row-wise softmax of logits/temperature with max subtraction.
template <typename T>
Tensor<T> softmax_stable(const Tensor<T>& logits, T temperature);

/// Mean of the first `count` channel groups of x[batch, groups*c], summing
/// groups in index order. Shared by every evaluation path so prefix outputs
/// are reproduced bit-for-bit.
template <typename T>
Tensor<T> prefix_mean(const Tensor<T>& x, std::size_t groups, std::size_t count);

// ---------------------------------------------------------------------------
// Differentiable operations. All take and return handles on a Graph.

/// Block-diagonal linear map.
///
/// x is [batch, G*c_in]; weight is [K, c_out, c_in] with K >= offset + G, and
/// input group g is multiplied by weight group offset + g. bias, when valid,
/// is [K, c_out]. Output group g depends only on input group g and each
/// output element is accumulated in the same order whatever G is, so a
/// packed call and G separate single-group calls agree bit-for-bit.
template <typename T>
Var grouped_linear(Graph<T>& g, Var x, Var weight, Var bias,
                   std::size_t group_offset = 0);

/// Grouped 2-D convolution. x is [batch, G*c_in, H, W]; weight is
/// [K, c_out, c_in, k, k] with k in {1, 3}. A depthwise convolution is the
/// special case c_in = c_out = 1 with one group per channel.
template <typename T>
Var grouped_conv2d(Graph<T>& g, Var x, Var weight, Var bias,
                   const Conv2dOptions& opts);

/// Repeats every channel group `factor` times: group g of the input becomes
/// groups g*factor .. g*factor+factor-1 of the output.
template <typename T>
Var replicate_groups(Graph<T>& g, Var x, std::size_t groups,
                     std::size_t factor = 2);

/// Batch normalisation over batch and spatial axes. gamma, beta and the
/// running statistics span K*C channels; this call uses channels
/// channel_offset .. channel_offset + x.dim(1).
template <typename T>
Var batch_norm(Graph<T>& g, Var x, Var gamma, Var beta, RunningStats<T>& stats,
               std::size_t channel_offset, BnMode mode,
               const BnOptions& opts = {});

template <typename T>
Var relu(Graph<T>& g, Var x);

/// [batch, C, H, W] -> [batch, C]
template <typename T>
Var global_avg_pool(Graph<T>& g, Var x);

/// Channel group `group` of x[batch, groups*c] as a [batch, c] tensor.
template <typename T>
Var take_group(Graph<T>& g, Var x, std::size_t group, std::size_t groups);

/// Differentiable prefix_mean.
template <typename T>
Var group_prefix_mean(Graph<T>& g, Var x, std::size_t groups, std::size_t count);

template <typename T>
Var add(Graph<T>& g, Var a, Var b);

template <typename T>
Var mul(Graph<T>& g, Var a, Var b);

template <typename T>
Var scale(Graph<T>& g, Var a, T factor);

template <typename T>
Var sum(Graph<T>& g, Var a);

template <typename T>
Var softmax(Graph<T>& g, Var logits, T temperature);

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Var cross_entropy_hard(Graph<T>& g, Var logits, std::span<const int> labels);

/// Mean over the batch of -sum_l p[l] log softmax(student / T)[l].
///
/// The teacher rows must be distributions (sum 1 within 1e-5). The teacher is
/// never a parent of the result, so no gradient can reach it. With
/// t2_scaling the term is multiplied by T^2.
template <typename T>
Var cross_entropy_soft(Graph<T>& g, Var student_logits, Var teacher_probs,
                       T temperature, bool t2_scaling = false);

}  // namespace hne
