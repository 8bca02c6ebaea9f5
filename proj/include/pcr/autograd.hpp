// Copyright 2026 The pcrpose Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

/// \file autograd.hpp
/// \brief Reverse-mode differentiation over a recorded graph of Tensor ops.
///
/// Every op in ops.hpp returns a Var whose node keeps its inputs alive and a
/// closure that scatters the node's gradient into them. Graphs are acyclic by
/// construction since a node can only reference nodes that already exist.

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pcr/tensor.hpp"

namespace pcr {

enum class Mode { train, infer };

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor::zeros(value.shape());
    return grad;
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<detail::Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  /// Learnable leaf.
  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Gradient accumulated by backward(); zeros if nothing reached this node.
  const Tensor& grad() const { return node_->grad_buffer(); }
  void zero_grad() {
    if (node_->grad.shape() == node_->value.shape()) node_->grad.fill(0.0);
  }

  /// Scalar value of a 1-element Var.
  double item() const {
    if (node_->value.size() != 1) throw ShapeError("item() on non-scalar " + shape().str());
    return node_->value[0];
  }

  /// Builds an op result. `fn` receives the result node and must accumulate
  /// into parents[i]->grad_buffer() for each parent that requires grad.
  static Var make(Tensor value, std::vector<Var> inputs, std::function<void(detail::Node&)> fn) {
    Var out(std::move(value));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const Var& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(inputs.size());
    for (Var& in : inputs) out.node_->parents.push_back(std::move(in.node_));
    out.node_->backward = std::move(fn);
    return out;
  }

  detail::Node* node() const { return node_.get(); }
  friend void backward(const Var& loss);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Fills grad buffers of every node that `loss` depends on. `loss` must be
/// a scalar; its own gradient is seeded with 1.
inline void backward(const Var& loss) {
  if (!loss.defined() || loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar");
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; grey nodes detect a cycle.
  enum class Mark { grey, black };
  std::unordered_map<detail::Node*, Mark> marks;
  std::vector<detail::Node*> order;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node(), 0}};
  marks[loss.node()] = Mark::grey;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (!p->requires_grad) continue;
      auto it = marks.find(p);
      if (it == marks.end()) {
        marks[p] = Mark::grey;
        stack.emplace_back(p, 0);
      } else if (it->second == Mark::grey) {
        throw std::logic_error("backward: cycle in recorded computation");
      }
    } else {
      marks[node] = Mark::black;
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

}  // namespace pcr
