// SPDX-License-Identifier: Apache-2.0
// Shared helpers for the test suites: seeded generators, small tree specs and
// a central finite-difference gradient oracle.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "hne/autodiff.hpp"
#include "hne/params.hpp"
#include "hne/tensor.hpp"
#include "hne/tree.hpp"

namespace hne::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dist(0, static_cast<int>(classes) - 1);
  std::vector<int> out(n);
  for (auto& l : out) l = dist(rng);
  return out;
}

/// Tree of `depth` grouped-linear levels.
inline TreeSpec linear_tree(std::size_t depth, std::size_t in, std::size_t width,
                            std::size_t classes, std::size_t reps = 1, bool bn = false) {
  TreeSpec spec;
  spec.depth = depth;
  spec.classes = classes;
  spec.input = {in};
  LevelSpec lv;
  lv.kind = BlockKind::linear;
  lv.reps = reps;
  lv.width = width;
  lv.batch_norm = bn;
  lv.bias = !bn;
  spec.levels.assign(depth + 1, lv);
  return spec;
}

/// Small conv tree on [channels, side, side] inputs.
inline TreeSpec conv_tree(std::size_t depth, std::size_t channels, std::size_t side,
                          std::size_t width, std::size_t classes, bool separable = false,
                          bool bn = true) {
  TreeSpec spec;
  spec.depth = depth;
  spec.classes = classes;
  spec.input = {channels, side, side};
  for (std::size_t l = 0; l <= depth; ++l) {
    LevelSpec lv;
    lv.kind = BlockKind::conv;
    lv.width = width;
    lv.kernel = 3;
    lv.stride = l == 1 ? 2 : 1;
    lv.separable = separable && l > 0;
    lv.batch_norm = bn;
    lv.bias = !bn;
    spec.levels.push_back(lv);
  }
  return spec;
}

/// Gives every batch-norm layer random recorded running statistics so
/// inference mode can run on a fresh store.
template <typename T>
void randomize_running_stats(ParamStore<T>& store, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mean(-0.5, 0.5), var(0.5, 2.0);
  for (auto& lv : store.levels()) {
    for (auto& n : lv.norms) {
      for (auto& v : n.stats.mean.values()) v = static_cast<T>(mean(rng));
      for (auto& v : n.stats.var.values()) v = static_cast<T>(var(rng));
      n.stats.recorded = true;
    }
    for (auto& p : lv.params) {
      if (p.kind == ParamKind::bn_scale)
        for (auto& v : p.value.values()) v = static_cast<T>(mean(rng) + 1.0);
      if (p.kind == ParamKind::bn_shift)
        for (auto& v : p.value.values()) v = static_cast<T>(mean(rng));
    }
  }
  store.touch();
}

/// Builds a scalar from graph leaves holding `inputs`.
using ScalarFn = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

struct GradCheck {
  /// ||analytic - numeric|| / max(||analytic||, ||numeric||), per input.
  std::vector<double> rel_error;
  double worst() const {
    double w = 0.0;
    for (double e : rel_error) w = std::max(w, e);
    return w;
  }
};

/// Reverse-mode gradients of f against central differences with step eps.
inline GradCheck check_gradients(const ScalarFn& f, std::vector<Tensor<double>> inputs,
                                 double eps = 1e-5) {
  auto evaluate = [&](const std::vector<Tensor<double>>& xs) {
    Graph<double> g(false);
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(g.variable(x));
    return g.value(f(g, vars))[0];
  };
  Graph<double> g;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(g.variable(x));
  g.backward(f(g, vars));

  GradCheck out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double> analytic = g.grad_or_zeros(vars[i]);
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double keep = inputs[i][j];
      inputs[i][j] = keep + eps;
      const double up = evaluate(inputs);
      inputs[i][j] = keep - eps;
      const double down = evaluate(inputs);
      inputs[i][j] = keep;
      const double numeric = (up - down) / (2.0 * eps);
      diff += (analytic[j] - numeric) * (analytic[j] - numeric);
      na += analytic[j] * analytic[j];
      nn += numeric * numeric;
    }
    const double scale = std::max(std::sqrt(na), std::sqrt(nn));
    // Both gradients vanish: compare absolutely.
    out.rel_error.push_back(scale < 1e-8 ? std::sqrt(diff) : std::sqrt(diff) / scale);
  }
  return out;
}

}  // namespace hne::testing
