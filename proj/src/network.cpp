// SPDX-License-Identifier: Apache-2.0
#include "hne/network.hpp"

#include "hne/error.hpp"

namespace hne {

template <typename T>
ParamBinding<T>::ParamBinding(Graph<T>& graph, ParamStore<T>& store)
    : ParamBinding(graph, static_cast<const ParamStore<T>&>(store)) {
  mutable_store_ = &store;
}

template <typename T>
ParamBinding<T>::ParamBinding(Graph<T>& graph, const ParamStore<T>& store)
    : graph_(graph), store_(store) {
  for (const auto& lv : store.levels()) vars_.emplace_back(lv.params.size());
}

template <typename T>
Var ParamBinding<T>::param(std::size_t level, std::size_t index) {
  Var& v = vars_.at(level).at(index);
  if (!v.valid()) v = graph_.parameter(store_.level(level).params[index].value);
  return v;
}

template <typename T>
Var ParamBinding<T>::find(std::size_t level, std::string_view name) {
  const auto& params = store_.level(level).params;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].name == name) return param(level, i);
  return Var{};
}

template <typename T>
RunningStats<T>& ParamBinding<T>::stats(std::size_t level, std::string_view name, BnMode mode) {
  if (mutable_store_ != nullptr) return mutable_store_->level(level).norm(name).stats;
  if (mode == BnMode::train) throw Error("train-mode batch norm needs a mutable parameter store");
  // Inference-mode batch norm only reads the statistics.
  return const_cast<RunningStats<T>&>(store_.level(level).norm(name).stats);
}

namespace {

template <typename T>
Var norm_relu(ParamBinding<T>& b, std::size_t level, const std::string& name, Var x,
              std::size_t channel_offset, BnMode mode) {
  const LevelSpec& lv = b.spec().levels[level];
  if (lv.batch_norm) {
    x = batch_norm(b.graph(), x, b.find(level, name + ".scale"), b.find(level, name + ".shift"),
                   b.stats(level, name, mode), channel_offset, mode);
  }
  return relu(b.graph(), x);
}

}  // namespace

template <typename T>
Var apply_level(ParamBinding<T>& binding, std::size_t level, Var x, std::size_t set_offset,
                BnMode mode) {
  const TreeSpec& spec = binding.spec();
  const LevelSpec& lv = spec.levels.at(level);
  Graph<T>& g = binding.graph();
  const Shape in = level_input_shape(spec, level);
  {
    const Shape& xs = g.value(x).shape();
    if (xs.size() != in.size() + 1 || xs[1] % in[0] != 0 ||
        !std::equal(in.begin() + 1, in.end(), xs.begin() + 2)) {
      throw ShapeError("level " + std::to_string(level) + " expects per-branch input " +
                       to_string(in) + ", got " + to_string(xs));
    }
  }
  std::size_t cin = in[0];
  for (std::size_t r = 0; r < lv.reps; ++r) {
    const std::string rep = "rep" + std::to_string(r);
    if (lv.kind == BlockKind::linear) {
      x = grouped_linear(g, x, binding.find(level, rep + ".weight"),
                         binding.find(level, rep + ".bias"), set_offset);
      x = norm_relu(binding, level, rep + ".bn", x, set_offset * lv.width, mode);
    } else {
      const std::size_t stride = r == 0 ? lv.stride : 1;
      if (lv.separable) {
        Conv2dOptions dw{stride, 1, set_offset * cin};
        x = grouped_conv2d(g, x, binding.find(level, rep + ".dw.weight"),
                           binding.find(level, rep + ".dw.bias"), dw);
        x = norm_relu(binding, level, rep + ".dw.bn", x, set_offset * cin, mode);
        Conv2dOptions pw{1, 0, set_offset};
        x = grouped_conv2d(g, x, binding.find(level, rep + ".pw.weight"),
                           binding.find(level, rep + ".pw.bias"), pw);
        x = norm_relu(binding, level, rep + ".pw.bn", x, set_offset * lv.width, mode);
      } else {
        Conv2dOptions opts{stride, lv.kernel / 2, set_offset};
        x = grouped_conv2d(g, x, binding.find(level, rep + ".weight"),
                           binding.find(level, rep + ".bias"), opts);
        x = norm_relu(binding, level, rep + ".bn", x, set_offset * lv.width, mode);
      }
    }
    cin = lv.width;
  }
  if (level == spec.depth) {
    if (lv.kind == BlockKind::conv) x = global_avg_pool(g, x);
    x = grouped_linear(g, x, binding.find(level, "head.weight"), binding.find(level, "head.bias"),
                       set_offset);
  }
  return x;
}

template <typename T>
PackedTrace packed_forward(ParamBinding<T>& binding, Var x, std::size_t budget, BnMode mode) {
  const SubEnsembleSpec sub = subensemble(binding.spec(), budget);
  PackedTrace trace;
  trace.groups_per_level = sub.groups_per_level;
  std::size_t groups = 1;
  for (std::size_t l = 0; l < sub.groups_per_level.size(); ++l) {
    const std::size_t next = sub.groups_per_level[l];
    if (next != groups) {
      x = replicate_groups(binding.graph(), x, groups, next / groups);
      groups = next;
    }
    x = apply_level(binding, l, x, 0, mode);
    trace.level_outputs.push_back(x);
  }
  trace.logits = x;
  return trace;
}

template class ParamBinding<float>;
template class ParamBinding<double>;
template Var apply_level(ParamBinding<float>&, std::size_t, Var, std::size_t, BnMode);
template Var apply_level(ParamBinding<double>&, std::size_t, Var, std::size_t, BnMode);
template PackedTrace packed_forward(ParamBinding<float>&, Var, std::size_t, BnMode);
template PackedTrace packed_forward(ParamBinding<double>&, Var, std::size_t, BnMode);

}  // namespace hne
