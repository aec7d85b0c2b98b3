// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hne/data.hpp"
#include "hne/eval.hpp"
#include "hne/losses.hpp"
#include "hne/params.hpp"

namespace hne {

/// 0.5 * lr0 * (1 + cos(pi * epoch / total)) for 0 <= epoch < total.
double cosine_lr(std::size_t epoch, std::size_t total, double lr0);

/// SGD with momentum and coupled weight decay:
///   v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v
/// Throws DivergenceError on a non-finite gradient.
template <typename T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, T lr,
                T momentum, T weight_decay);

template <typename T>
struct OptimizerState {
  /// Momentum buffers, parallel to the store's levels and parameters.
  std::vector<std::vector<Tensor<T>>> velocity;
  std::uint64_t steps = 0;
  std::size_t epochs_done = 0;

  bool operator==(const OptimizerState&) const = default;
};

template <typename T>
OptimizerState<T> make_optimizer_state(const ParamStore<T>& store);

/// Applies one update to every parameter. grads mirrors the store layout; a
/// null entry means a zero gradient. Batch-norm scale and shift take no
/// weight decay.
template <typename T>
void sgd_step(ParamStore<T>& store, const std::vector<std::vector<const Tensor<T>*>>& grads,
              OptimizerState<T>& state, double lr, double momentum, double weight_decay);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  /// Evaluate on the test split every this many epochs (and after the last).
  std::size_t eval_every = 1;
  /// Checkpoint cadence in epochs; 0 writes only the final checkpoint.
  std::size_t checkpoint_every = 0;
  AugmentPolicy augment;
  Averaging averaging = Averaging::logits;
  LossConfig loss;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Reads the keys of a "train" section (the loss lives in its own section).
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path = "train");

/// One row per (epoch, budget).
struct MetricRow {
  std::size_t epoch = 0;
  std::size_t budget = 0;
  std::size_t models = 1;
  double accuracy = 0.0;
  /// Epoch means over training batches; NaN when the objective lacks the term.
  double loss_total = 0.0;
  double loss_independent = 0.0;
  double loss_structured = 0.0;
  double loss_distill = 0.0;
  double loss_hierarchical = 0.0;
  /// NaN for a single model.
  double diversity = 0.0;
  double lr = 0.0;
};

struct MetricLog {
  std::vector<MetricRow> rows;

  /// CSV with a "# schema: hne.metrics/1" line and a fixed column order.
  void write_csv(std::ostream& out) const;
  std::string to_csv() const;
  /// Rows of the last logged epoch, by budget.
  std::vector<MetricRow> last_epoch() const;
};

struct EvalSummary {
  /// accuracy[b] of the budget-b prediction.
  std::vector<double> accuracy;
  /// diversity[b] over the first 2^b leaves (NaN for b = 0).
  std::vector<double> diversity;
};

/// One budget-B pass per test batch; every smaller budget reuses its prefix
/// outputs.
EvalSummary evaluate(const ParamStore<float>& store, const Dataset& data,
                     Averaging averaging = Averaging::logits, std::size_t batch_size = 500);

struct TrainHooks {
  /// Called after each epoch with the number of completed epochs.
  std::function<void(std::size_t, const ParamStore<float>&, const OptimizerState<float>&)>
      on_epoch_end;
};

struct TrainResult {
  ParamStore<float> params;
  OptimizerState<float> optimizer;
  MetricLog log;
};

/// Trains all 2^B leaves jointly with the packed forward pass.
/// Deterministic for a given seed; throws DivergenceError on a non-finite
/// loss.
TrainResult train(const Dataset& train_set, const Dataset& test_set, const TreeSpec& spec,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

}  // namespace hne
