// SPDX-License-Identifier: Apache-2.0
#include "hne/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "hne/error.hpp"
#include "hne/json_reader.hpp"
#include "hne/network.hpp"

namespace hne {

double cosine_lr(std::size_t epoch, std::size_t total, double lr0) {
  if (epoch >= total) {
    throw DomainError("cosine_lr: epoch " + std::to_string(epoch) + " outside 0.." +
                      std::to_string(total == 0 ? 0 : total - 1));
  }
  const double t = static_cast<double>(epoch) / static_cast<double>(total);
  return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> velocity, T lr,
                T momentum, T weight_decay) {
  if (grad.size() != param.size() || velocity.size() != param.size()) {
    throw ShapeError("sgd_update: parameter, gradient and velocity sizes differ (" +
                     std::to_string(param.size()) + ", " + std::to_string(grad.size()) + ", " +
                     std::to_string(velocity.size()) + ")");
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw DivergenceError("non-finite gradient at element " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

template <typename T>
OptimizerState<T> make_optimizer_state(const ParamStore<T>& store) {
  OptimizerState<T> state;
  for (const auto& lv : store.levels()) {
    std::vector<Tensor<T>> bufs;
    for (const auto& p : lv.params) bufs.emplace_back(p.value.shape());
    state.velocity.push_back(std::move(bufs));
  }
  return state;
}

template <typename T>
void sgd_step(ParamStore<T>& store, const std::vector<std::vector<const Tensor<T>*>>& grads,
              OptimizerState<T>& state, double lr, double momentum, double weight_decay) {
  auto& levels = store.levels();
  if (grads.size() != levels.size() || state.velocity.size() != levels.size()) {
    throw ShapeError("sgd_step: gradient layout does not match the parameter store");
  }
  for (std::size_t l = 0; l < levels.size(); ++l) {
    auto& params = levels[l].params;
    if (grads[l].size() != params.size() || state.velocity[l].size() != params.size()) {
      throw ShapeError("sgd_step: gradient layout does not match level " + std::to_string(l));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = params[i].value;
      const T wd = decays(params[i].kind) ? static_cast<T>(weight_decay) : T{0};
      const Tensor<T> zeros = grads[l][i] == nullptr ? Tensor<T>(p.shape()) : Tensor<T>();
      const Tensor<T>& g = grads[l][i] == nullptr ? zeros : *grads[l][i];
      try {
        sgd_update<T>(p.values(), g.values(), state.velocity[l][i].values(), static_cast<T>(lr),
                      static_cast<T>(momentum), wd);
      } catch (const DivergenceError& e) {
        throw DivergenceError("level " + std::to_string(l) + " " + params[i].name + ": " +
                              e.what());
      }
    }
  }
  ++state.steps;
  store.touch();
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
  if (eval_every == 0) throw ConfigError("train.eval_every must be positive");
  if (!(augment.flip_prob >= 0.0 && augment.flip_prob <= 1.0))
    throw ConfigError("train.augment.flip_prob must lie in [0, 1]");
  loss.validate();
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"lr", cfg.lr},
          {"momentum", cfg.momentum},
          {"weight_decay", cfg.weight_decay},
          {"seed", cfg.seed},
          {"eval_every", cfg.eval_every},
          {"checkpoint_every", cfg.checkpoint_every},
          {"augment",
           {{"pad", cfg.augment.pad},
            {"crop_h", cfg.augment.crop_h},
            {"crop_w", cfg.augment.crop_w},
            {"flip_prob", cfg.augment.flip_prob}}}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path) {
  JsonObject obj(j, path);
  TrainConfig cfg;
  cfg.epochs = obj.get<std::size_t>("epochs", cfg.epochs);
  cfg.batch_size = obj.get<std::size_t>("batch_size", cfg.batch_size);
  cfg.lr = obj.get<double>("lr", cfg.lr);
  cfg.momentum = obj.get<double>("momentum", cfg.momentum);
  cfg.weight_decay = obj.get<double>("weight_decay", cfg.weight_decay);
  cfg.seed = obj.get<std::uint64_t>("seed", cfg.seed);
  cfg.eval_every = obj.get<std::size_t>("eval_every", cfg.eval_every);
  cfg.checkpoint_every = obj.get<std::size_t>("checkpoint_every", cfg.checkpoint_every);
  if (obj.has("augment")) {
    JsonObject aug = obj.child("augment");
    cfg.augment.pad = aug.get<std::size_t>("pad", 0);
    cfg.augment.crop_h = aug.get<std::size_t>("crop_h", 0);
    cfg.augment.crop_w = aug.get<std::size_t>("crop_w", 0);
    cfg.augment.flip_prob = aug.get<double>("flip_prob", 0.0);
    aug.finish();
  }
  obj.finish();
  cfg.validate();
  return cfg;
}

namespace {

void put_number(std::ostream& out, double v) {
  if (std::isnan(v)) return;  // empty cell
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  out << buf;
}

double component(const std::map<std::string, double>& sums, const char* key, std::size_t batches) {
  const auto it = sums.find(key);
  if (it == sums.end() || batches == 0) return std::numeric_limits<double>::quiet_NaN();
  return it->second / static_cast<double>(batches);
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch, std::uint64_t salt) {
  std::uint64_t x = seed * 0x9e3779b97f4a7c15ULL + (epoch + 1) * 0xbf58476d1ce4e5b9ULL + salt;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void MetricLog::write_csv(std::ostream& out) const {
  out << "# schema: hne.metrics/1\n"
      << "epoch,budget,models,accuracy,loss_total,loss_independent,loss_structured,"
         "loss_distill,loss_hierarchical,diversity,lr\n";
  for (const MetricRow& r : rows) {
    out << r.epoch << ',' << r.budget << ',' << r.models << ',';
    for (double v : {r.accuracy, r.loss_total, r.loss_independent, r.loss_structured,
                     r.loss_distill, r.loss_hierarchical, r.diversity}) {
      put_number(out, v);
      out << ',';
    }
    put_number(out, r.lr);
    out << '\n';
  }
}

std::string MetricLog::to_csv() const {
  std::ostringstream out;
  write_csv(out);
  return out.str();
}

std::vector<MetricRow> MetricLog::last_epoch() const {
  std::vector<MetricRow> out;
  if (rows.empty()) return out;
  const std::size_t epoch = rows.back().epoch;
  for (const MetricRow& r : rows)
    if (r.epoch == epoch) out.push_back(r);
  return out;
}

EvalSummary evaluate(const ParamStore<float>& store, const Dataset& data, Averaging averaging,
                     std::size_t batch_size) {
  const TreeSpec& spec = store.spec();
  const std::size_t depth = spec.depth;
  EvalSummary s;
  s.accuracy.assign(depth + 1, 0.0);
  s.diversity.assign(depth + 1, std::numeric_limits<double>::quiet_NaN());
  if (data.size() == 0) return s;
  std::vector<std::size_t> hits(depth + 1, 0);
  std::vector<double> div_sum(depth + 1, 0.0);
  EvalOptions opts;
  opts.averaging = averaging;
  opts.keep_cache = false;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<float> x = gather_samples(data, idx);
    const EvalResult<float> r = forward_packed(store, depth, x, opts);
    const std::size_t n = end - start;
    for (std::size_t b = 0; b <= depth; ++b) {
      const std::vector<int> pred = predict(r.prefix_outputs[b]);
      for (std::size_t i = 0; i < n; ++i) hits[b] += pred[i] == data.labels[start + i];
      if (b == 0) continue;
      // First 2^b leaves of the [batch, N, L] logits.
      const std::size_t models = std::size_t{1} << b;
      const std::size_t all = r.per_leaf_logits.dim(1), classes = r.per_leaf_logits.dim(2);
      Tensor<float> part({n, models, classes});
      for (std::size_t m = 0; m < n; ++m)
        std::copy_n(r.per_leaf_logits.data() + m * all * classes, models * classes,
                    part.data() + m * models * classes);
      div_sum[b] += diversity_logit_std(part) * static_cast<double>(n);
    }
  }
  for (std::size_t b = 0; b <= depth; ++b) {
    s.accuracy[b] = static_cast<double>(hits[b]) / static_cast<double>(data.size());
    if (b > 0) s.diversity[b] = div_sum[b] / static_cast<double>(data.size());
  }
  return s;
}

TrainResult train(const Dataset& train_set, const Dataset& test_set, const TreeSpec& spec,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  spec.validate();
  if (train_set.sample_shape() != spec.input) {
    throw ShapeError("training samples " + to_string(train_set.sample_shape()) +
                     " do not match the tree input " + to_string(spec.input));
  }
  if (train_set.classes != spec.classes) {
    throw ConfigError("dataset has " + std::to_string(train_set.classes) + " classes, tree has " +
                      std::to_string(spec.classes));
  }
  TrainResult out{ParamStore<float>::initialize(spec, cfg.seed), {}, {}};
  out.optimizer = make_optimizer_state(out.params);
  ParamStore<float>& store = out.params;
  const std::size_t depth = spec.depth;
  const std::size_t models = spec.leaves();
  const bool augmenting = !cfg.augment.identity();
  if (augmenting && spec.input.size() != 3) {
    throw ConfigError("train.augment needs image-shaped samples");
  }

  std::vector<std::size_t> order(train_set.size());
  std::vector<std::size_t> batch_idx;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(epoch_seed(cfg.seed, epoch, 1));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 augment_rng(epoch_seed(cfg.seed, epoch, 2));

    std::map<std::string, double> sums;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) break;  // batch statistics need two samples
      batch_idx.assign(order.begin() + start, order.begin() + end);
      Tensor<float> x = gather_samples(train_set, batch_idx);
      if (augmenting) x = augment(x, cfg.augment, augment_rng);
      const std::vector<int> labels = gather_labels(train_set, batch_idx);

      Graph<float> g;
      ParamBinding<float> binding(g, store);
      const PackedTrace trace = packed_forward(binding, g.constant(std::move(x)), depth,
                                               BnMode::train);
      const LossBundle<float> loss =
          compute_loss(g, trace.logits, models, models, labels, cfg.loss);
      if (!std::isfinite(loss.total_value)) {
        throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch + 1) +
                              ", batch " + std::to_string(batches + 1));
      }
      g.backward(loss.total);
      std::vector<std::vector<const Tensor<float>*>> grads;
      for (std::size_t l = 0; l <= depth; ++l) {
        std::vector<const Tensor<float>*> level;
        for (const Var& v : binding.bound(l)) level.push_back(v.valid() ? g.grad(v) : nullptr);
        grads.push_back(std::move(level));
      }
      sgd_step(store, grads, out.optimizer, lr, cfg.momentum, cfg.weight_decay);
      sums["total"] += loss.total_value;
      for (const auto& [name, value] : loss.components) sums[name] += value;
      ++batches;
    }
    out.optimizer.epochs_done = epoch + 1;

    const bool last = epoch + 1 == cfg.epochs;
    if ((epoch + 1) % cfg.eval_every == 0 || last) {
      const EvalSummary s = evaluate(store, test_set, cfg.averaging);
      for (std::size_t b = 0; b <= depth; ++b) {
        MetricRow row;
        row.epoch = epoch + 1;
        row.budget = b;
        row.models = std::size_t{1} << b;
        row.accuracy = s.accuracy[b];
        row.loss_total = component(sums, "total", batches);
        row.loss_independent = component(sums, "independent", batches);
        row.loss_structured = component(sums, "structured", batches);
        row.loss_distill = component(sums, "distill", batches);
        row.loss_hierarchical = component(sums, "hierarchical", batches);
        row.diversity = s.diversity[b];
        row.lr = lr;
        out.log.rows.push_back(row);
      }
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch + 1, store, out.optimizer);
  }
  return out;
}

template void sgd_update(std::span<float>, std::span<const float>, std::span<float>, float, float,
                         float);
template void sgd_update(std::span<double>, std::span<const double>, std::span<double>, double,
                         double, double);
template OptimizerState<float> make_optimizer_state(const ParamStore<float>&);
template OptimizerState<double> make_optimizer_state(const ParamStore<double>&);
template void sgd_step(ParamStore<float>&, const std::vector<std::vector<const Tensor<float>*>>&,
                       OptimizerState<float>&, double, double, double);
template void sgd_step(ParamStore<double>&, const std::vector<std::vector<const Tensor<double>*>>&,
                       OptimizerState<double>&, double, double, double);

}  // namespace hne
