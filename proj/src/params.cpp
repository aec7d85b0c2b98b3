// SPDX-License-Identifier: Apache-2.0
#include "hne/params.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>

#include "hne/error.hpp"

namespace hne {
namespace {

std::atomic<std::uint64_t> g_revision{1};

std::uint64_t next_revision() { return g_revision.fetch_add(1); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void add_norm(LevelLayout& out, const std::string& name, std::size_t channels) {
  out.params.push_back({name + ".scale", ParamKind::bn_scale, Shape{channels}, 1});
  out.params.push_back({name + ".shift", ParamKind::bn_shift, Shape{channels}, 1});
  out.norms.push_back({name, channels});
}

}  // namespace

bool decays(ParamKind kind) {
  return kind != ParamKind::bn_scale && kind != ParamKind::bn_shift;
}

LevelLayout level_layout(const TreeSpec& spec, std::size_t level) {
  const LevelSpec& lv = spec.levels.at(level);
  const Shape in = level_input_shape(spec, level);
  LevelLayout out;
  std::size_t cin = in[0];
  for (std::size_t r = 0; r < lv.reps; ++r) {
    const std::string rep = "rep" + std::to_string(r);
    if (lv.kind == BlockKind::linear) {
      out.params.push_back({rep + ".weight", ParamKind::weight, Shape{1, lv.width, cin}, cin});
      if (lv.bias) out.params.push_back({rep + ".bias", ParamKind::bias, Shape{1, lv.width}, cin});
      if (lv.batch_norm) add_norm(out, rep + ".bn", lv.width);
    } else if (lv.separable) {
      out.params.push_back({rep + ".dw.weight", ParamKind::weight, Shape{cin, 1, 1, 3, 3}, 9});
      if (lv.bias) out.params.push_back({rep + ".dw.bias", ParamKind::bias, Shape{cin, 1}, 9});
      if (lv.batch_norm) add_norm(out, rep + ".dw.bn", cin);
      out.params.push_back({rep + ".pw.weight", ParamKind::weight, Shape{1, lv.width, cin, 1, 1}, cin});
      if (lv.bias) out.params.push_back({rep + ".pw.bias", ParamKind::bias, Shape{1, lv.width}, cin});
      if (lv.batch_norm) add_norm(out, rep + ".pw.bn", lv.width);
    } else {
      const std::size_t k = lv.kernel;
      out.params.push_back(
          {rep + ".weight", ParamKind::weight, Shape{1, lv.width, cin, k, k}, cin * k * k});
      if (lv.bias) out.params.push_back({rep + ".bias", ParamKind::bias, Shape{1, lv.width}, cin * k * k});
      if (lv.batch_norm) add_norm(out, rep + ".bn", lv.width);
    }
    cin = lv.width;
  }
  if (level == spec.depth) {
    out.params.push_back({"head.weight", ParamKind::head_weight, Shape{1, spec.classes, cin}, cin});
    out.params.push_back({"head.bias", ParamKind::bias, Shape{1, spec.classes}, cin});
  }
  return out;
}

template <typename T>
const ParamTensor<T>& LevelState<T>::param(std::string_view name) const {
  for (const auto& p : params)
    if (p.name == name) return p;
  throw Error("no parameter named " + std::string(name));
}

template <typename T>
ParamTensor<T>& LevelState<T>::param(std::string_view name) {
  return const_cast<ParamTensor<T>&>(std::as_const(*this).param(name));
}

template <typename T>
const NormState<T>& LevelState<T>::norm(std::string_view name) const {
  for (const auto& n : norms)
    if (n.name == name) return n;
  throw Error("no batch-norm layer named " + std::string(name));
}

template <typename T>
NormState<T>& LevelState<T>::norm(std::string_view name) {
  return const_cast<NormState<T>&>(std::as_const(*this).norm(name));
}

std::uint64_t derive_node_seed(std::uint64_t master_seed, std::size_t level,
                               std::size_t index) {
  std::uint64_t h = splitmix64(master_seed);
  h = splitmix64(h ^ (0x1000193ULL * (level + 1)));
  h = splitmix64(h ^ (0x100000001b3ULL * (index + 1)));
  return h;
}

template <typename T>
ParamStore<T>::ParamStore(TreeSpec spec, std::uint64_t master_seed,
                          std::vector<LevelState<T>> levels)
    : spec_(std::move(spec)),
      master_seed_(master_seed),
      levels_(std::move(levels)),
      revision_(next_revision()) {
  if (levels_.size() != spec_.depth + 1) throw Error("parameter store: level count mismatch");
  for (std::size_t l = 0; l <= spec_.depth; ++l) {
    const LevelLayout layout = level_layout(spec_, l);
    const std::size_t sets = spec_.sets_at(l);
    const LevelState<T>& st = levels_[l];
    if (st.params.size() != layout.params.size() || st.norms.size() != layout.norms.size()) {
      throw Error("parameter store: level " + std::to_string(l) + " does not match its layout");
    }
    for (std::size_t i = 0; i < layout.params.size(); ++i) {
      Shape full = layout.params[i].per_set;
      full[0] *= sets;
      if (st.params[i].name != layout.params[i].name || st.params[i].value.shape() != full) {
        throw Error("parameter store: " + layout.params[i].name + " at level " +
                    std::to_string(l) + " should have shape " + to_string(full));
      }
    }
    for (std::size_t i = 0; i < layout.norms.size(); ++i) {
      const std::size_t ch = layout.norms[i].channels_per_set * sets;
      if (st.norms[i].stats.mean.size() != ch || st.norms[i].stats.var.size() != ch) {
        throw Error("parameter store: running statistics of " + layout.norms[i].name +
                    " have the wrong size");
      }
    }
  }
}

template <typename T>
ParamStore<T>::ParamStore(const ParamStore& other)
    : spec_(other.spec_),
      master_seed_(other.master_seed_),
      levels_(other.levels_),
      revision_(next_revision()) {}

template <typename T>
ParamStore<T>& ParamStore<T>::operator=(const ParamStore& other) {
  if (this != &other) {
    spec_ = other.spec_;
    master_seed_ = other.master_seed_;
    levels_ = other.levels_;
    revision_ = next_revision();
  }
  return *this;
}

template <typename T>
ParamStore<T> ParamStore<T>::initialize(const TreeSpec& spec, std::uint64_t master_seed) {
  spec.validate();
  std::vector<LevelState<T>> levels;
  for (std::size_t l = 0; l <= spec.depth; ++l) {
    const LevelLayout layout = level_layout(spec, l);
    const std::size_t sets = spec.sets_at(l);
    LevelState<T> st;
    for (const ParamLayout& pl : layout.params) {
      Shape full = pl.per_set;
      full[0] *= sets;
      st.params.push_back({pl.name, pl.kind, Tensor<T>(full)});
    }
    for (const NormLayout& nl : layout.norms) {
      const std::size_t ch = nl.channels_per_set * sets;
      st.norms.push_back({nl.name, {Tensor<T>({ch}, T{0}), Tensor<T>({ch}, T{1}), false}});
    }
    for (std::size_t k = 0; k < sets; ++k) {
      std::mt19937_64 rng(derive_node_seed(master_seed, l, k));
      for (std::size_t i = 0; i < layout.params.size(); ++i) {
        const ParamLayout& pl = layout.params[i];
        Tensor<T>& t = st.params[i].value;
        const std::size_t slice = t.size() / sets;
        T* dst = t.data() + k * slice;
        const double fan = static_cast<double>(pl.fan_in);
        double bound = 0.0;
        switch (pl.kind) {
          case ParamKind::weight:
            bound = std::sqrt(6.0 / fan);
            break;
          case ParamKind::head_weight:
          case ParamKind::bias:
            bound = 1.0 / std::sqrt(fan);
            break;
          case ParamKind::bn_scale:
            std::fill_n(dst, slice, T{1});
            continue;
          case ParamKind::bn_shift:
            std::fill_n(dst, slice, T{0});
            continue;
        }
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t j = 0; j < slice; ++j) dst[j] = static_cast<T>(dist(rng));
      }
    }
    levels.push_back(std::move(st));
  }
  return ParamStore(spec, master_seed, std::move(levels));
}

template <typename T>
std::uint64_t ParamStore<T>::node_seed(NodeId node) const {
  if (node.level > spec_.depth || node.index >= spec_.sets_at(node.level)) {
    throw DomainError("node " + to_string(node) + " is not part of the tree");
  }
  return derive_node_seed(master_seed_, node.level, node.index);
}

template <typename T>
std::vector<std::pair<std::string, std::span<const T>>> ParamStore<T>::node_params(
    NodeId node) const {
  node_seed(node);  // validates
  const std::size_t sets = spec_.sets_at(node.level);
  std::vector<std::pair<std::string, std::span<const T>>> out;
  for (const auto& p : levels_[node.level].params) {
    const std::size_t slice = p.value.size() / sets;
    out.emplace_back(p.name, std::span<const T>(p.value.data() + node.index * slice, slice));
  }
  return out;
}

template <typename T>
void ParamStore<T>::copy_node(NodeId from, NodeId to) {
  node_seed(from);
  node_seed(to);
  if (from.level != to.level) throw DomainError("copy_node: nodes must share a level");
  const std::size_t sets = spec_.sets_at(from.level);
  auto copy_slice = [&](Tensor<T>& t) {
    const std::size_t slice = t.size() / sets;
    std::copy_n(t.data() + from.index * slice, slice, t.data() + to.index * slice);
  };
  for (auto& p : levels_[from.level].params) copy_slice(p.value);
  for (auto& n : levels_[from.level].norms) {
    copy_slice(n.stats.mean);
    copy_slice(n.stats.var);
  }
  touch();
}

template <typename T>
void ParamStore<T>::touch() {
  revision_ = next_revision();
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& lv : levels_)
    for (const auto& p : lv.params) total += p.value.size();
  return total;
}

template <typename U, typename T>
ParamStore<U> convert_store(const ParamStore<T>& store) {
  std::vector<LevelState<U>> levels;
  for (const auto& lv : store.levels()) {
    LevelState<U> out;
    for (const auto& p : lv.params) out.params.push_back({p.name, p.kind, p.value.template cast<U>()});
    for (const auto& n : lv.norms) {
      out.norms.push_back({n.name,
                           {n.stats.mean.template cast<U>(), n.stats.var.template cast<U>(),
                            n.stats.recorded}});
    }
    levels.push_back(std::move(out));
  }
  return ParamStore<U>(store.spec(), store.master_seed(), std::move(levels));
}

template struct LevelState<float>;
template struct LevelState<double>;
template class ParamStore<float>;
template class ParamStore<double>;
template ParamStore<double> convert_store(const ParamStore<float>&);
template ParamStore<float> convert_store(const ParamStore<double>&);
template ParamStore<float> convert_store(const ParamStore<float>&);
template ParamStore<double> convert_store(const ParamStore<double>&);

}  // namespace hne
