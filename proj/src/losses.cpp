// SPDX-License-Identifier: Apache-2.0
#include "hne/losses.hpp"

#include <bit>
#include <cmath>

#include "hne/error.hpp"
#include "hne/json_reader.hpp"
#include "hne/ops.hpp"

namespace hne {

std::string to_string(Objective o) {
  switch (o) {
    case Objective::independent:
      return "independent";
    case Objective::structured:
      return "structured";
    case Objective::codistill:
      return "codistill";
    case Objective::hierarchical:
      return "hierarchical";
  }
  return "?";
}

Objective objective_from_string(const std::string& s) {
  if (s == "independent") return Objective::independent;
  if (s == "structured") return Objective::structured;
  if (s == "codistill") return Objective::codistill;
  if (s == "hierarchical") return Objective::hierarchical;
  throw ConfigError("objective: expected independent|structured|codistill|hierarchical, got \"" +
                    s + "\"");
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("loss.alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("loss.temperature must be positive, got " + std::to_string(temperature));
  }
  if (!(structured_mix >= 0.0 && structured_mix <= 1.0)) {
    throw ConfigError("loss.structured_mix must lie in [0, 1], got " +
                      std::to_string(structured_mix));
  }
}

nlohmann::json to_json(const LossConfig& cfg) {
  return {{"objective", to_string(cfg.objective)},
          {"alpha", cfg.alpha},
          {"temperature", cfg.temperature},
          {"t2_scaling", cfg.t2_scaling},
          {"structured_mix", cfg.structured_mix}};
}

LossConfig loss_config_from_json(const nlohmann::json& j, const std::string& path) {
  JsonObject obj(j, path);
  LossConfig cfg;
  if (obj.has("objective")) {
    try {
      cfg.objective = objective_from_string(obj.require<std::string>("objective"));
    } catch (const ConfigError&) {
      JsonObject::fail(obj.at("objective"),
                       "expected independent|structured|codistill|hierarchical");
    }
  }
  cfg.alpha = obj.get<double>("alpha", cfg.alpha);
  cfg.temperature = obj.get<double>("temperature", cfg.temperature);
  cfg.t2_scaling = obj.get<bool>("t2_scaling", cfg.t2_scaling);
  cfg.structured_mix = obj.get<double>("structured_mix", cfg.structured_mix);
  obj.finish();
  cfg.validate();
  return cfg;
}

namespace {

std::size_t budget_of(std::size_t models) {
  if (models == 0 || !std::has_single_bit(models)) {
    throw DomainError("leaf count " + std::to_string(models) + " is not a power of two");
  }
  return static_cast<std::size_t>(std::countr_zero(models));
}

/// (1-w) a + w b, leaving out a term whose weight is zero.
template <typename T>
Var mix(Graph<T>& g, Var a, Var b, double w) {
  if (w == 0.0) return a;
  if (w == 1.0) return b;
  return add(g, scale(g, a, static_cast<T>(1.0 - w)), scale(g, b, static_cast<T>(w)));
}

template <typename T>
Var teacher_for(Graph<T>& g, Var ensemble, const LossConfig& cfg, const Tensor<T>* frozen) {
  if (frozen != nullptr) return g.constant(*frozen);
  return ensemble_teacher(g, ensemble, static_cast<T>(cfg.temperature));
}

template <typename T>
LossBundle<T> bundle(Graph<T>& g, Var total, std::map<std::string, T> parts) {
  LossBundle<T> out;
  out.total = total;
  out.total_value = g.value(total)[0];
  out.components = std::move(parts);
  return out;
}

}  // namespace

template <typename T>
std::vector<Var> prefix_outputs(Graph<T>& g, Var leaf_logits, std::size_t models) {
  const std::size_t budget = budget_of(models);
  std::vector<Var> out;
  for (std::size_t j = 0; j <= budget; ++j)
    out.push_back(group_prefix_mean(g, leaf_logits, models, std::size_t{1} << j));
  return out;
}

template <typename T>
Var loss_independent(Graph<T>& g, Var leaf_logits, std::size_t models, std::size_t ensemble_size,
                     std::span<const int> labels) {
  if (models != ensemble_size) {
    throw DomainError("independent loss needs all " + std::to_string(ensemble_size) +
                      " leaves, got " + std::to_string(models));
  }
  Var total;
  for (std::size_t n = 0; n < models; ++n) {
    const Var term = cross_entropy_hard(g, take_group(g, leaf_logits, n, models), labels);
    total = total.valid() ? add(g, total, term) : term;
  }
  return total;
}

template <typename T>
Var loss_structured(Graph<T>& g, const std::vector<Var>& prefixes, std::size_t depth,
                    std::span<const int> labels) {
  if (prefixes.size() != depth + 1) {
    throw DomainError("structured loss needs prefix outputs for budgets 0.." + std::to_string(depth) +
                      ", got " + std::to_string(prefixes.size()));
  }
  Var total;
  for (const Var& y : prefixes) {
    const Var term = cross_entropy_hard(g, y, labels);
    total = total.valid() ? add(g, total, term) : term;
  }
  return total;
}

template <typename T>
Var ensemble_teacher(Graph<T>& g, Var ensemble_output, T temperature) {
  return g.stop_gradient(softmax(g, ensemble_output, temperature));
}

template <typename T>
LossBundle<T> loss_codistill(Graph<T>& g, Var leaf_logits, std::size_t models,
                             std::size_t ensemble_size, std::span<const int> labels,
                             const LossConfig& cfg, const Tensor<T>* frozen_teacher) {
  cfg.validate();
  const Var li = loss_independent(g, leaf_logits, models, ensemble_size, labels);
  const Var ensemble = group_prefix_mean(g, leaf_logits, models, models);
  const Var teacher = teacher_for(g, ensemble, cfg, frozen_teacher);
  const T temp = static_cast<T>(cfg.temperature);
  Var ld;
  for (std::size_t n = 0; n < models; ++n) {
    const Var term = cross_entropy_soft(g, take_group(g, leaf_logits, n, models), teacher, temp,
                                        cfg.t2_scaling);
    ld = ld.valid() ? add(g, ld, term) : term;
  }
  return bundle(g, mix(g, li, ld, cfg.alpha),
                {{"independent", g.value(li)[0]}, {"distill", g.value(ld)[0]}});
}

template <typename T>
LossBundle<T> loss_hierarchical_distill(Graph<T>& g, Var leaf_logits, std::size_t models,
                                        std::size_t ensemble_size, std::span<const int> labels,
                                        const LossConfig& cfg, const Tensor<T>* frozen_teacher) {
  cfg.validate();
  const Var li = loss_independent(g, leaf_logits, models, ensemble_size, labels);
  const std::vector<Var> ys = prefix_outputs(g, leaf_logits, models);
  const Var teacher = teacher_for(g, ys.back(), cfg, frozen_teacher);
  const T temp = static_cast<T>(cfg.temperature);
  Var lhd;
  for (std::size_t b = 0; b + 1 < ys.size(); ++b) {
    const Var term = cross_entropy_soft(g, ys[b], teacher, temp, cfg.t2_scaling);
    lhd = lhd.valid() ? add(g, lhd, term) : term;
  }
  if (!lhd.valid()) lhd = g.constant(Tensor<T>({1}, T{0}));
  return bundle(g, mix(g, li, lhd, cfg.alpha),
                {{"independent", g.value(li)[0]}, {"hierarchical", g.value(lhd)[0]}});
}

template <typename T>
LossBundle<T> compute_loss(Graph<T>& g, Var leaf_logits, std::size_t models,
                           std::size_t ensemble_size, std::span<const int> labels,
                           const LossConfig& cfg, const Tensor<T>* frozen_teacher) {
  switch (cfg.objective) {
    case Objective::independent: {
      const Var li = loss_independent(g, leaf_logits, models, ensemble_size, labels);
      return bundle(g, li, {{"independent", g.value(li)[0]}});
    }
    case Objective::structured: {
      cfg.validate();
      if (models != ensemble_size) {
        throw DomainError("structured loss needs all " + std::to_string(ensemble_size) +
                          " leaves, got " + std::to_string(models));
      }
      const Var ls = loss_structured(g, prefix_outputs(g, leaf_logits, models), budget_of(models),
                                     labels);
      if (cfg.structured_mix == 0.0) return bundle(g, ls, {{"structured", g.value(ls)[0]}});
      const Var li = loss_independent(g, leaf_logits, models, ensemble_size, labels);
      return bundle(g, mix(g, ls, li, cfg.structured_mix),
                    {{"structured", g.value(ls)[0]}, {"independent", g.value(li)[0]}});
    }
    case Objective::codistill:
      return loss_codistill(g, leaf_logits, models, ensemble_size, labels, cfg, frozen_teacher);
    case Objective::hierarchical:
      return loss_hierarchical_distill(g, leaf_logits, models, ensemble_size, labels, cfg,
                                       frozen_teacher);
  }
  throw Error("unknown objective");
}

template <typename T>
double diversity_logit_std(const Tensor<T>& per_leaf_logits) {
  if (per_leaf_logits.rank() != 3) {
    throw ShapeError("diversity: expected [batch, models, classes], got " +
                     to_string(per_leaf_logits.shape()));
  }
  const std::size_t batch = per_leaf_logits.dim(0);
  const std::size_t models = per_leaf_logits.dim(1);
  const std::size_t classes = per_leaf_logits.dim(2);
  if (models < 2) {
    throw DomainError("diversity needs at least two models, got " + std::to_string(models));
  }
  if (batch == 0 || classes == 0) throw ShapeError("diversity: empty input");
  const T* z = per_leaf_logits.data();
  double total = 0.0;
  for (std::size_t m = 0; m < batch; ++m) {
    for (std::size_t l = 0; l < classes; ++l) {
      // Work relative to the first model so identical members give exactly 0.
      const double ref = z[(m * models) * classes + l];
      double mean = 0.0;
      for (std::size_t n = 0; n < models; ++n) mean += z[(m * models + n) * classes + l] - ref;
      mean /= static_cast<double>(models);
      double var = 0.0;
      for (std::size_t n = 0; n < models; ++n) {
        const double d = (z[(m * models + n) * classes + l] - ref) - mean;
        var += d * d;
      }
      total += std::sqrt(var / static_cast<double>(models));
    }
  }
  return total / static_cast<double>(batch * classes);
}

#define HNE_INSTANTIATE_LOSSES(T)                                                              \
  template std::vector<Var> prefix_outputs(Graph<T>&, Var, std::size_t);                      \
  template Var loss_independent(Graph<T>&, Var, std::size_t, std::size_t, std::span<const int>); \
  template Var loss_structured(Graph<T>&, const std::vector<Var>&, std::size_t,               \
                               std::span<const int>);                                         \
  template Var ensemble_teacher(Graph<T>&, Var, T);                                           \
  template LossBundle<T> loss_codistill(Graph<T>&, Var, std::size_t, std::size_t,             \
                                        std::span<const int>, const LossConfig&,              \
                                        const Tensor<T>*);                                    \
  template LossBundle<T> loss_hierarchical_distill(Graph<T>&, Var, std::size_t, std::size_t,  \
                                                   std::span<const int>, const LossConfig&,   \
                                                   const Tensor<T>*);                         \
  template LossBundle<T> compute_loss(Graph<T>&, Var, std::size_t, std::size_t,               \
                                      std::span<const int>, const LossConfig&,                \
                                      const Tensor<T>*);                                      \
  template double diversity_logit_std(const Tensor<T>&);

HNE_INSTANTIATE_LOSSES(float)
HNE_INSTANTIATE_LOSSES(double)

}  // namespace hne
