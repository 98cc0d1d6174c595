/*
 * Copyright (c) 2026, The agestyle Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "agestyle/tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

namespace agestyle {

// Reverse-mode automatic differentiation over Tensor values.
//
// Every differentiable op records a node whose backward function is itself
// written in terms of differentiable ops. Running `gradients` with
// `create_graph = true` therefore records the backward pass, which is what the
// R1 penalty needs to differentiate a gradient norm w.r.t. parameters.

namespace detail {
inline thread_local bool grad_mode = true;
}

inline bool grad_enabled() { return detail::grad_mode; }

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(detail::grad_mode) {
    detail::grad_mode = enabled;
  }
  ~GradModeGuard() { detail::grad_mode = previous_; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

template <typename Scalar>
class Var;

template <typename Scalar>
struct Node {
  /// Gradients w.r.t. each parent given the gradient of this node's value.
  /// `needed[i]` is false when parent i's gradient will be discarded; the
  /// function may return an undefined Var in that slot.
  using BackwardFn =
      std::function<std::vector<Var<Scalar>>(const Var<Scalar>&, const std::vector<bool>&)>;

  Tensor<Scalar> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  Tensor<Scalar> grad;
  const char* op = "leaf";

  bool is_leaf() const { return !backward; }
};

/// Shared handle to a graph node. Copies alias the same node.
template <typename Scalar>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}
  explicit Var(Tensor<Scalar> value, bool requires_grad = false)
      : node_(std::make_shared<Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf(); }
  const NodePtr& node() const { return node_; }

  /// Leaf-only mutation, used by optimizers and checkpoint loading.
  Tensor<Scalar>& mutable_value() {
    if (!node_->is_leaf()) throw std::logic_error("mutable_value on a non-leaf Var");
    return node_->value;
  }
  void set_requires_grad(bool flag) {
    if (!node_->is_leaf()) throw std::logic_error("set_requires_grad on a non-leaf Var");
    node_->requires_grad = flag;
  }

  /// Accumulated gradient from `backward`; empty until the first call.
  const Tensor<Scalar>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }

  Var detach() const { return Var(node_->value, false); }

 private:
  NodePtr node_;
};

template <typename Scalar>
Var<Scalar> constant(Tensor<Scalar> value) {
  return Var<Scalar>(std::move(value), false);
}

template <typename Scalar>
Var<Scalar> parameter(Tensor<Scalar> value) {
  return Var<Scalar>(std::move(value), true);
}

/// Builds the result of an op. The backward function is only kept when
/// recording is enabled and some input requires a gradient.
template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, std::vector<Var<Scalar>> inputs,
                        typename Node<Scalar>::BackwardFn backward, const char* op) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->op = op;
      node->backward = std::move(backward);
      node->parents.reserve(inputs.size());
      for (auto& in : inputs) node->parents.push_back(in.node());
    }
  }
  return Var<Scalar>(std::move(node));
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar>
Var<Scalar> ones_like(const Var<Scalar>& a);

namespace detail {

template <typename Scalar>
struct Traversal {
  std::vector<Node<Scalar>*> order;  // parents before children
  std::unordered_map<Node<Scalar>*, bool> relevant;
};

// Post-order DFS over nodes that require grad. A node is relevant when it is a
// target or leads to one; only relevant parents get gradients computed.
template <typename Scalar, typename IsTarget>
Traversal<Scalar> traverse(Node<Scalar>* root, IsTarget&& is_target) {
  Traversal<Scalar> t;
  if (!root->requires_grad) return t;
  struct Frame {
    Node<Scalar>* node;
    std::size_t next;
  };
  std::vector<Frame> stack{{root, 0}};
  t.relevant[root] = false;
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      Node<Scalar>* p = f.node->parents[f.next++].get();
      if (p->requires_grad && !t.relevant.count(p)) {
        t.relevant[p] = false;
        stack.push_back({p, 0});
      }
      continue;
    }
    Node<Scalar>* n = f.node;
    bool rel = is_target(n);
    for (const auto& p : n->parents) {
      auto it = t.relevant.find(p.get());
      rel = rel || (it != t.relevant.end() && it->second);
    }
    t.relevant[n] = rel;
    t.order.push_back(n);
    stack.pop_back();
  }
  return t;
}

template <typename Scalar, typename OnGrad>
void run_backward(const Var<Scalar>& output, const Var<Scalar>& seed,
                  const Traversal<Scalar>& t, bool create_graph, OnGrad&& on_grad) {
  GradModeGuard mode(create_graph);
  std::unordered_map<Node<Scalar>*, Var<Scalar>> grads;
  grads[output.node().get()] = seed.defined() ? seed : ones_like(output.detach());
  for (auto it = t.order.rbegin(); it != t.order.rend(); ++it) {
    Node<Scalar>* n = *it;
    auto git = grads.find(n);
    if (git == grads.end()) continue;
    Var<Scalar> g = std::move(git->second);
    grads.erase(git);
    on_grad(n, g);
    if (n->is_leaf()) continue;
    std::vector<bool> needed(n->parents.size());
    bool any = false;
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      auto rit = t.relevant.find(n->parents[i].get());
      needed[i] = rit != t.relevant.end() && rit->second;
      any = any || needed[i];
    }
    if (!any) continue;
    std::vector<Var<Scalar>> parent_grads = n->backward(g, needed);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      if (!needed[i] || !parent_grads[i].defined()) continue;
      Node<Scalar>* p = n->parents[i].get();
      auto pit = grads.find(p);
      if (pit == grads.end()) {
        grads.emplace(p, std::move(parent_grads[i]));
      } else {
        pit->second = add(pit->second, parent_grads[i]);
      }
    }
  }
}

}  // namespace detail

/// Gradients of `output` w.r.t. each of `inputs`. Unreachable inputs get zeros.
/// With `create_graph`, the returned gradients are themselves differentiable.
template <typename Scalar>
std::vector<Var<Scalar>> gradients(const Var<Scalar>& output, const std::vector<Var<Scalar>>& inputs,
                                   const Var<Scalar>& grad_output = Var<Scalar>(),
                                   bool create_graph = false) {
  std::unordered_map<Node<Scalar>*, std::size_t> wanted;
  for (std::size_t i = 0; i < inputs.size(); ++i) wanted.emplace(inputs[i].node().get(), i);
  auto t = detail::traverse(output.node().get(),
                            [&](Node<Scalar>* n) { return wanted.count(n) > 0; });
  std::vector<Var<Scalar>> result(inputs.size());
  detail::run_backward(output, grad_output, t, create_graph,
                       [&](Node<Scalar>* n, const Var<Scalar>& g) {
                         auto it = wanted.find(n);
                         if (it != wanted.end()) result[it->second] = g;
                       });
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!result[i].defined()) result[i] = constant(Tensor<Scalar>::zeros(inputs[i].shape()));
  }
  return result;
}

/// Accumulates d(output)/d(leaf) into every reachable leaf's `grad()`.
template <typename Scalar>
void backward(const Var<Scalar>& output) {
  auto t = detail::traverse(output.node().get(), [](Node<Scalar>* n) { return n->is_leaf(); });
  detail::run_backward(output, Var<Scalar>(), t, false,
                       [](Node<Scalar>* n, const Var<Scalar>& g) {
                         if (!n->is_leaf()) return;
                         if (n->grad.empty()) {
                           n->grad = g.value();
                         } else {
                           n->grad.array() += g.value().array();
                         }
                       });
}

}  // namespace agestyle
