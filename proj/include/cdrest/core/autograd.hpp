#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "cdrest/core/tensor.hpp"

namespace cdrest {

// Tape-free reverse-mode autograd: each op returns a Var whose node holds the
// value, the parent links and a closure that pushes the node's gradient into
// its parents. backward() topologically sorts from the root and runs the
// closures in reverse order.

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGrad {
  bool prev;
  NoGrad() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGrad() { grad_mode() = prev; }
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first use
  bool needs_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;  // may be empty for leaves
  int scratch = 0;                         // topo-sort mark

  void ensure_grad() {
    if (!grad.defined()) grad = Tensor<T>::zeros(value.shape());
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> v, bool needs_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(v);
    node_->needs_grad = needs_grad;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& val() const { return node_->value; }
  Tensor<T>& val_mut() { return node_->value; }  // optimizer updates between steps
  Tensor<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.defined(); }
  bool needs_grad() const { return node_ && node_->needs_grad; }
  void zero_grad() {
    if (node_->grad.defined()) node_->grad.fill(T(0));
  }

  const std::vector<idx>& shape() const { return node_->value.shape(); }
  idx numel() const { return node_->value.numel(); }

  std::shared_ptr<Node<T>> node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Tensor<T> v) {
  return Var<T>(std::move(v), false);
}

template <typename T>
Var<T> leaf(Tensor<T> v) {
  return Var<T>(std::move(v), true);
}

// Wire an op result into the graph. When grad mode is off (or no parent needs
// gradients) the result is detached and parents are not retained.
template <typename T>
Var<T> make_node(Tensor<T> out, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backprop) {
  bool need = false;
  if (grad_mode())
    for (const auto& p : parents)
      if (p.defined() && p.needs_grad()) need = true;
  Var<T> v(std::move(out), need);
  if (need) {
    for (auto& p : parents)
      if (p.defined()) v.node()->parents.push_back(p.node());
    v.node()->backprop = std::move(backprop);
  }
  return v;
}

template <typename T>
void backward(const Var<T>& root) {
  CR_CHECK(root.defined() && root.needs_grad(), "backward on detached var");
  CR_CHECK(root.numel() == 1, "backward expects a scalar root");

  // Iterative topological order over the needs_grad subgraph.
  std::vector<Node<T>*> order;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.push_back({root.node().get(), 0});
  root.node()->scratch = 1;
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->needs_grad && p->scratch == 0) {
        p->scratch = 1;
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad();
  root.node()->grad.fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    n->scratch = 0;
    if (n->backprop) n->backprop(*n);
  }
}

template <typename T>
using Params = std::vector<std::pair<std::string, Var<T>>>;

}  // namespace cdrest
