// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <vector>

#include "hne/tensor.hpp"

namespace hne {

/// Handle to a value recorded on a Graph.
struct Var {
  static constexpr std::uint32_t kInvalid = 0xffffffffu;
  std::uint32_t id = kInvalid;
  bool valid() const noexcept { return id != kInvalid; }
};

/// Tape for reverse-mode differentiation over one training step.
///
/// Nodes are appended in evaluation order and may only reference earlier
/// nodes, so the provenance graph is acyclic by construction and reverse
/// traversal is a plain walk from the root down to node 0. Gradients are
/// allocated lazily; a node no gradient reaches never runs its backward
/// function, which makes a stop_gradient boundary deposit nothing upstream.
template <typename T>
class Graph {
 public:
  /// Receives the node's accumulated output gradient.
  using BackwardFn = std::function<void(Graph&, const Tensor<T>&)>;

  /// With record=false no backward functions are kept (inference).
  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor<T> value);
  /// Differentiable leaf owned by the graph.
  Var variable(Tensor<T> value);
  /// Differentiable leaf borrowing external storage, which must outlive the
  /// graph and stay unmodified until backward() returns.
  Var parameter(const Tensor<T>& storage);
  /// Same value, but reverse traversal stops here.
  Var stop_gradient(Var v);

  /// Appends an op result. The backward function is dropped when no parent
  /// requires a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> parents,
             BackwardFn backward);

  const Tensor<T>& value(Var v) const;
  bool requires_grad(Var v) const;
  bool is_stopped(Var v) const;

  /// Gradient slot of v, zero-initialised on first access. For op authors.
  Tensor<T>& grad_slot(Var v);
  /// nullptr when no gradient reached v.
  const Tensor<T>* grad(Var v) const;
  /// Gradient of v, or zeros of v's shape when none reached it.
  Tensor<T> grad_or_zeros(Var v) const;

  /// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool recording() const noexcept { return record_; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    bool stopped = false;
    BackwardFn backward;
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  Var push(Node n);

  bool record_;
  std::deque<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace hne
