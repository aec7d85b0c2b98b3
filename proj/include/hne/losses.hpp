// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hne/autodiff.hpp"
#include "hne/tensor.hpp"

namespace hne {

/// Training objectives.
///   independent   sum over leaves of their cross-entropy
///   structured    sum over budgets of the cross-entropy of each prefix mean
///   codistill     (1-a) independent + a * leaves distilled from the ensemble
///   hierarchical  (1-a) independent + a * every smaller prefix mean distilled from it
enum class Objective { independent, structured, codistill, hierarchical };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

struct LossConfig {
  Objective objective = Objective::independent;
  /// Weight of the distillation term.
  double alpha = 0.5;
  /// Softening temperature, applied to both teacher and student.
  double temperature = 2.0;
  /// Multiply distillation terms by T^2.
  bool t2_scaling = false;
  /// For the structured objective: total = (1-mix) structured + mix independent.
  double structured_mix = 0.0;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

nlohmann::json to_json(const LossConfig& cfg);
LossConfig loss_config_from_json(const nlohmann::json& j, const std::string& path = "loss");

template <typename T>
struct LossBundle {
  Var total;
  T total_value{};
  /// "independent", "structured", "distill", "hierarchical" as computed.
  std::map<std::string, T> components;
};

/// Prefix means for budgets 0 .. b as graph values, where the leaf logits [batch, 2^b * L] hold
/// `models` = 2^b leaves.
template <typename T>
std::vector<Var> prefix_outputs(Graph<T>& g, Var leaf_logits, std::size_t models);

/// Sum over leaves of the batch-mean cross-entropy. `ensemble_size` is the
/// number of leaves of the tree; a partial ensemble is rejected.
template <typename T>
Var loss_independent(Graph<T>& g, Var leaf_logits, std::size_t models, std::size_t ensemble_size,
                     std::span<const int> labels);

/// Sum over b = 0..B of the batch-mean cross-entropy of the budget-b prefix mean.
template <typename T>
Var loss_structured(Graph<T>& g, const std::vector<Var>& prefixes, std::size_t depth,
                    std::span<const int> labels);

/// Teacher distribution softmax(ensemble / T), cut from the gradient.
template <typename T>
Var ensemble_teacher(Graph<T>& g, Var ensemble_output, T temperature);

/// Leaves distilled from the full ensemble plus the independent term. When
/// `frozen_teacher` is given it replaces the teacher computed from the
/// leaves.
template <typename T>
LossBundle<T> loss_codistill(Graph<T>& g, Var leaf_logits, std::size_t models,
                             std::size_t ensemble_size, std::span<const int> labels,
                             const LossConfig& cfg, const Tensor<T>* frozen_teacher = nullptr);

/// Every smaller sub-ensemble (budgets 0..B-1) distilled from the full ensemble,
/// plus the independent term.
template <typename T>
LossBundle<T> loss_hierarchical_distill(Graph<T>& g, Var leaf_logits, std::size_t models,
                                        std::size_t ensemble_size, std::span<const int> labels,
                                        const LossConfig& cfg,
                                        const Tensor<T>* frozen_teacher = nullptr);

/// Dispatches on cfg.objective.
template <typename T>
LossBundle<T> compute_loss(Graph<T>& g, Var leaf_logits, std::size_t models,
                           std::size_t ensemble_size, std::span<const int> labels,
                           const LossConfig& cfg, const Tensor<T>* frozen_teacher = nullptr);

/// Standard deviation of the logits across models (divisor N), averaged
/// over classes and samples. per_leaf_logits is [batch, N, L] with N >= 2.
template <typename T>
double diversity_logit_std(const Tensor<T>& per_leaf_logits);

}  // namespace hne
