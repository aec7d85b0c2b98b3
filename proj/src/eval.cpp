// SPDX-License-Identifier: Apache-2.0
#include "hne/eval.hpp"

#include <algorithm>
#include <cstring>
#include <set>

#include "hne/error.hpp"
#include "hne/network.hpp"
#include "hne/ops.hpp"

namespace hne {

std::string to_string(Averaging a) { return a == Averaging::logits ? "logits" : "probs"; }

Averaging averaging_from_string(const std::string& s) {
  if (s == "logits") return Averaging::logits;
  if (s == "probs") return Averaging::probs;
  throw ConfigError("average: expected logits|probs, got \"" + s + "\"");
}

template <typename T>
std::uint64_t tensor_digest(const Tensor<T>& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t d : t.shape()) {
    const std::uint64_t v = d;
    feed(&v, sizeof v);
  }
  feed(t.data(), t.size() * sizeof(T));
  return h;
}

namespace {

template <typename T>
void check_input(const TreeSpec& spec, const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != spec.input.size() + 1 || !std::equal(spec.input.begin(), spec.input.end(), s.begin() + 1)) {
    throw ShapeError("input " + to_string(s) + " does not match [batch, " +
                     to_string(spec.input).substr(1));
  }
}

template <typename T>
Tensor<T> evaluate_node(const ParamStore<T>& store, NodeId node, const Tensor<T>& input) {
  Graph<T> g(false);
  ParamBinding<T> binding(g, store);
  const Var in = g.constant(input);
  const Var out = apply_level(binding, node.level, in, node.index, BnMode::infer);
  return g.value(out);
}

/// Group `group` of `groups` along axis 1.
template <typename T>
Tensor<T> slice_group(const Tensor<T>& x, std::size_t group, std::size_t groups) {
  Shape shape = x.shape();
  const std::size_t batch = shape[0];
  const std::size_t row = x.size() / batch;
  const std::size_t part = row / groups;
  shape[1] /= groups;
  Tensor<T> out(shape);
  for (std::size_t m = 0; m < batch; ++m) {
    std::copy_n(x.data() + m * row + group * part, part, out.data() + m * part);
  }
  return out;
}

template <typename T>
const Tensor<T>& input_of(const std::map<NodeId, Tensor<T>>& cache, const TreeSpec& spec,
                          NodeId node, const Tensor<T>& x) {
  if (node.level == 0) return x;
  const auto it = cache.find(parent_of(spec, node));
  if (it == cache.end()) throw Error("activation of the parent of " + to_string(node) + " is missing");
  return it->second;
}

/// Fills per_leaf_logits and prefix_outputs from flat leaf logits [batch, G*L].
template <typename T>
void finish(EvalResult<T>& r, const Tensor<T>& flat, std::size_t classes) {
  const std::size_t batch = flat.dim(0);
  const std::size_t count = std::size_t{1} << r.budget;
  r.per_leaf_logits = flat.reshaped({batch, count, classes});
  Tensor<T> averaged = flat;
  if (r.averaging == Averaging::probs) {
    for (std::size_t n = 0; n < count; ++n) {
      const Tensor<T> p = softmax_stable(slice_group(flat, n, count), T{1});
      for (std::size_t m = 0; m < batch; ++m)
        std::copy_n(p.data() + m * classes, classes, averaged.data() + (m * count + n) * classes);
    }
  }
  r.prefix_outputs.clear();
  for (std::size_t j = 0; j <= r.budget; ++j)
    r.prefix_outputs.push_back(prefix_mean(averaged, count, std::size_t{1} << j));
}

template <typename T>
Tensor<T> gather_leaves(const std::map<NodeId, Tensor<T>>& cache, const TreeSpec& spec,
                        std::size_t budget) {
  const std::size_t count = std::size_t{1} << budget;
  const auto depth = static_cast<std::uint32_t>(spec.depth);
  const Tensor<T>& first = cache.at(NodeId{depth, 0});
  const std::size_t batch = first.dim(0);
  const std::size_t classes = first.dim(1);
  Tensor<T> flat({batch, count * classes});
  for (std::size_t n = 0; n < count; ++n) {
    const auto idx = static_cast<std::uint32_t>(spec.node_index(n, spec.depth));
    const Tensor<T>& leaf = cache.at(NodeId{depth, idx});
    for (std::size_t m = 0; m < batch; ++m)
      std::copy_n(leaf.data() + m * classes, classes, flat.data() + (m * count + n) * classes);
  }
  return flat;
}

template <typename T>
EvalResult<T> start_result(const ParamStore<T>& store, std::size_t budget, const Tensor<T>& x,
                           Averaging averaging) {
  EvalResult<T> r;
  r.budget = budget;
  r.averaging = averaging;
  r.groups_per_level = subensemble(store.spec(), budget).groups_per_level;
  r.revision = store.revision();
  r.input_digest = tensor_digest(x);
  return r;
}

}  // namespace

template <typename T>
Tensor<T> forward_leaf(const ParamStore<T>& store, std::size_t leaf, const Tensor<T>& x) {
  const TreeSpec& spec = store.spec();
  check_input(spec, x);
  if (leaf >= spec.leaves()) {
    throw DomainError("leaf " + std::to_string(leaf) + " outside 0.." +
                      std::to_string(spec.leaves() - 1));
  }
  Tensor<T> h = x;
  for (std::size_t l = 0; l <= spec.depth; ++l) {
    const NodeId node{static_cast<std::uint32_t>(l),
                      static_cast<std::uint32_t>(spec.node_index(leaf, l))};
    h = evaluate_node(store, node, h);
  }
  return h;
}

template <typename T>
EvalResult<T> forward_subensemble_sequential(const ParamStore<T>& store, std::size_t budget,
                                             const Tensor<T>& x, const EvalOptions& opts) {
  const TreeSpec& spec = store.spec();
  check_input(spec, x);
  EvalResult<T> r = start_result(store, budget, x, opts.averaging);
  const SubEnsembleSpec sub = subensemble(spec, budget);
  for (const NodeId& node : sub.nodes) {
    r.cache[node] = evaluate_node(store, node, input_of(r.cache, spec, node, x));
    ++r.block_evaluations;
  }
  finish(r, gather_leaves(r.cache, spec, budget), spec.classes);
  if (!opts.keep_cache) r.cache.clear();
  return r;
}

template <typename T>
EvalResult<T> forward_packed(const ParamStore<T>& store, std::size_t budget, const Tensor<T>& x,
                             const EvalOptions& opts) {
  const TreeSpec& spec = store.spec();
  check_input(spec, x);
  EvalResult<T> r = start_result(store, budget, x, opts.averaging);
  Graph<T> g(false);
  ParamBinding<T> binding(g, store);
  const PackedTrace trace = packed_forward(binding, g.constant(x), budget, BnMode::infer);
  for (std::size_t l = 0; l < trace.level_outputs.size(); ++l) {
    const std::size_t groups = trace.groups_per_level[l];
    r.block_evaluations += groups;
    if (!opts.keep_cache) continue;
    const Tensor<T>& out = g.value(trace.level_outputs[l]);
    for (std::size_t k = 0; k < groups; ++k) {
      r.cache[NodeId{static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(k)}] =
          groups == 1 ? out : slice_group(out, k, groups);
    }
  }
  finish(r, g.value(trace.logits), spec.classes);
  return r;
}

template <typename T>
EvalResult<T> extend_budget(EvalResult<T> prev, const ParamStore<T>& store, const Tensor<T>& x) {
  const TreeSpec& spec = store.spec();
  if (prev.revision != store.revision()) {
    throw StaleCacheError("cached activations were computed with parameter revision " +
                          std::to_string(prev.revision) + ", store is at revision " +
                          std::to_string(store.revision()));
  }
  if (prev.input_digest != tensor_digest(x)) {
    throw StaleCacheError("cached activations were computed for a different input batch");
  }
  if (prev.budget >= spec.depth) {
    throw DomainError("budget " + std::to_string(prev.budget) + " is already the full ensemble");
  }
  if (prev.cache.empty()) throw Error("result was produced without an activation cache");
  const SubEnsembleSpec sub = subensemble(spec, prev.budget + 1);
  for (const NodeId& node : sub.nodes) {
    if (prev.cache.count(node) != 0) continue;
    prev.cache[node] = evaluate_node(store, node, input_of(prev.cache, spec, node, x));
    ++prev.block_evaluations;
  }
  prev.budget = sub.budget;
  prev.groups_per_level = sub.groups_per_level;
  finish(prev, gather_leaves(prev.cache, spec, prev.budget), spec.classes);
  return prev;
}

template <typename T>
std::vector<int> predict(const Tensor<T>& outputs) {
  if (outputs.rank() != 2) throw ShapeError("predict: expected [batch, classes], got " + to_string(outputs.shape()));
  const std::size_t batch = outputs.dim(0);
  const std::size_t classes = outputs.dim(1);
  std::vector<int> out(batch, 0);
  for (std::size_t m = 0; m < batch; ++m) {
    const T* row = outputs.data() + m * classes;
    std::size_t best = 0;
    for (std::size_t l = 1; l < classes; ++l)
      if (row[l] > row[best]) best = l;
    out[m] = static_cast<int>(best);
  }
  return out;
}

template <typename T>
double accuracy(const Tensor<T>& outputs, std::span<const int> labels) {
  const std::vector<int> pred = predict(outputs);
  if (pred.size() != labels.size()) {
    throw ShapeError("accuracy: " + std::to_string(pred.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  }
  if (pred.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::vector<NodeId> anytime_schedule(const TreeSpec& spec) {
  std::vector<NodeId> order;
  std::set<NodeId> seen;
  for (std::size_t b = 0; b <= spec.depth; ++b) {
    for (const NodeId& n : subensemble(spec, b).nodes)
      if (seen.insert(n).second) order.push_back(n);
  }
  return order;
}

template <typename T>
AnytimeSession<T>::AnytimeSession(const ParamStore<T>& store, Tensor<T> x, Averaging averaging)
    : store_(store), x_(std::move(x)), averaging_(averaging) {
  const TreeSpec& spec = store.spec();
  check_input(spec, x_);
  schedule_ = anytime_schedule(spec);
  for (std::size_t b = 0; b <= spec.depth; ++b)
    budget_end_.push_back(subensemble(spec, b).nodes.size());
}

template <typename T>
bool AnytimeSession<T>::step() {
  if (done_ == schedule_.size()) return false;
  const NodeId node = schedule_[done_];
  cache_[node] = evaluate_node(store_, node, input_of(cache_, store_.spec(), node, x_));
  ++done_;
  return true;
}

template <typename T>
void AnytimeSession<T>::run_to(std::size_t budget) {
  if (budget >= budget_end_.size()) {
    throw DomainError("budget " + std::to_string(budget) + " outside 0.." +
                      std::to_string(budget_end_.size() - 1));
  }
  while (done_ < budget_end_[budget]) step();
}

template <typename T>
std::optional<std::size_t> AnytimeSession<T>::completed_budget() const {
  std::optional<std::size_t> best;
  for (std::size_t b = 0; b < budget_end_.size(); ++b)
    if (done_ >= budget_end_[b]) best = b;
  return best;
}

template <typename T>
EvalResult<T> AnytimeSession<T>::result() const {
  const auto b = completed_budget();
  if (!b) throw Error("no sub-ensemble has been completed yet");
  EvalResult<T> r = start_result(store_, *b, x_, averaging_);
  for (std::size_t i = 0; i < budget_end_[*b]; ++i) r.cache[schedule_[i]] = cache_.at(schedule_[i]);
  r.block_evaluations = budget_end_[*b];
  finish(r, gather_leaves(r.cache, store_.spec(), *b), store_.spec().classes);
  return r;
}

#define HNE_INSTANTIATE_EVAL(T)                                                               \
  template std::uint64_t tensor_digest(const Tensor<T>&);                                    \
  template Tensor<T> forward_leaf(const ParamStore<T>&, std::size_t, const Tensor<T>&);      \
  template EvalResult<T> forward_subensemble_sequential(const ParamStore<T>&, std::size_t,   \
                                                        const Tensor<T>&, const EvalOptions&); \
  template EvalResult<T> forward_packed(const ParamStore<T>&, std::size_t, const Tensor<T>&, \
                                        const EvalOptions&);                                 \
  template EvalResult<T> extend_budget(EvalResult<T>, const ParamStore<T>&, const Tensor<T>&); \
  template std::vector<int> predict(const Tensor<T>&);                                       \
  template double accuracy(const Tensor<T>&, std::span<const int>);                          \
  template class AnytimeSession<T>;

HNE_INSTANTIATE_EVAL(float)
HNE_INSTANTIATE_EVAL(double)

}  // namespace hne
