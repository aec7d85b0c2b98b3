// SPDX-License-Identifier: Apache-2.0
#include "hne/autodiff.hpp"

#include "hne/error.hpp"

namespace hne {

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw Error("invalid graph handle");
  return nodes_[v.id];
}

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
  if (!v.valid() || v.id >= nodes_.size()) throw Error("invalid graph handle");
  return nodes_[v.id];
}

template <typename T>
Var Graph<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::variable(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = record_;
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::parameter(const Tensor<T>& storage) {
  Node n;
  n.external = &storage;
  n.requires_grad = record_;
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::stop_gradient(Var v) {
  Node n;
  n.owned = value(v);
  n.stopped = true;
  return push(std::move(n));
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, std::initializer_list<Var> parents,
                     BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  const auto next = static_cast<std::uint32_t>(nodes_.size());
  bool needs = false;
  for (Var p : parents) {
    if (!p.valid()) continue;
    // Parents always precede their children, so the tape cannot hold a cycle.
    if (p.id >= next) throw Error("graph node refers to a later node");
    needs = needs || node(p).requires_grad;
  }
  n.requires_grad = record_ && needs;
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.owned;
}

template <typename T>
bool Graph<T>::requires_grad(Var v) const {
  return node(v).requires_grad;
}

template <typename T>
bool Graph<T>::is_stopped(Var v) const {
  return node(v).stopped;
}

template <typename T>
Tensor<T>& Graph<T>::grad_slot(Var v) {
  Node& n = node(v);
  if (!n.has_grad) {
    n.grad = Tensor<T>(value(v).shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
const Tensor<T>* Graph<T>::grad(Var v) const {
  const Node& n = node(v);
  return n.has_grad ? &n.grad : nullptr;
}

template <typename T>
Tensor<T> Graph<T>::grad_or_zeros(Var v) const {
  const Node& n = node(v);
  return n.has_grad ? n.grad : Tensor<T>(value(v).shape());
}

template <typename T>
void Graph<T>::backward(Var root) {
  if (value(root).size() != 1) {
    throw ShapeError("backward() needs a scalar root, got shape " +
                     to_string(value(root).shape()));
  }
  grad_slot(root)[0] = T{1};
  for (std::int64_t i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad || !n.backward || n.stopped) continue;
    n.backward(*this, n.grad);
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace hne
