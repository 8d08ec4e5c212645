#pragma once

// Reverse-mode differentiable tensor. A Tensor is a shared handle onto a graph
// node; operations create new nodes that remember their parents and a closure
// that pushes the node's gradient back to them.

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "lumbarseg/errors.hpp"

namespace lumbarseg::ad {

using Index = Eigen::Index;

// Channels-first extents. Feature maps are (channels, depth, height, width).
using Shape = std::vector<Index>;

template <typename Scalar>
using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

inline Index element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape);

template <typename Scalar>
struct Node {
  Shape shape;
  Array<Scalar> value;
  Array<Scalar> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  // Filled only while kink recording is on (see ops.hpp): whether the forward
  // pass hit a point where the op is not differentiable (ReLU input exactly 0,
  // tied maxima in a pooling window), and a hash of the op's piecewise
  // selection pattern (ReLU mask, pooling argmax).
  bool at_kink = false;
  std::uint64_t kink_signature = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward_fn;

  template <typename Derived>
  void accumulate(const Eigen::ArrayBase<Derived>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

template <typename Scalar>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Array<Scalar> v = Array<Scalar>::Zero(element_count(shape));
    return from(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor constant(Shape shape, Scalar value, bool requires_grad = false) {
    Array<Scalar> v = Array<Scalar>::Constant(element_count(shape), value);
    return from(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor from(Shape shape, Array<Scalar> values, bool requires_grad = false) {
    if (element_count(shape) != values.size()) {
      throw ShapeError("tensor shape " + to_string(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<Node<Scalar>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  Index size() const { return node_->value.size(); }

  Array<Scalar>& value() { return node_->value; }
  const Array<Scalar>& value() const { return node_->value; }

  // Gradient buffer; allocated as zeros on first access.
  Array<Scalar>& grad() {
    if (node_->grad.size() != node_->value.size()) node_->grad = Array<Scalar>::Zero(size());
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.resize(0); }

  // Ranked-4 feature-map helpers.
  Index channels() const { return dim(0); }
  Index voxels() const { return size() / dim(0); }

  const NodePtr& node() const { return node_; }

  // Runs reverse-mode accumulation from this scalar. Gradients add onto
  // whatever leaves already hold.
  void backward() const;

  // True when any node reachable from here reported a non-differentiable point.
  bool touched_kink() const;
  // Combined selection pattern of all piecewise ops reachable from here.
  std::uint64_t kink_signature() const;

 private:
  NodePtr node_;
};

namespace detail {

// Builds the result node of an op. The backward closure is only retained when
// some parent requires gradients, so inference graphs free eagerly.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Array<Scalar> value,
                           std::initializer_list<Tensor<Scalar>> parents,
                           std::function<void(const Node<Scalar>&)> backward_fn) {
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  for (const auto& p : parents) {
    if (!p.defined()) continue;
    if (p.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const auto& p : parents) {
      if (p.defined()) node->parents.push_back(p.node());
    }
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<Scalar>(std::move(node));
}

}  // namespace detail

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  if (size() != 1) throw ShapeError("backward() needs a scalar, got " + to_string(shape()));
  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<Node<Scalar>*> order;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  std::vector<Node<Scalar>*> visited;
  auto seen = [&](Node<Scalar>* n) {
    return std::find(visited.begin(), visited.end(), n) != visited.end();
  };
  stack.emplace_back(node_.get(), 0);
  visited.push_back(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<Scalar>* p = n->parents[next++].get();
      if (p->requires_grad && !seen(p)) {
        visited.push_back(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->accumulate(Array<Scalar>::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

namespace detail {
inline std::uint64_t fnv1a(const void* data, std::size_t bytes,
                           std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename Scalar, typename Visit>
void visit_graph(const Node<Scalar>* root, Visit visit) {
  std::vector<const Node<Scalar>*> stack{root};
  std::vector<const Node<Scalar>*> visited;
  while (!stack.empty()) {
    const Node<Scalar>* n = stack.back();
    stack.pop_back();
    if (std::find(visited.begin(), visited.end(), n) != visited.end()) continue;
    visited.push_back(n);
    visit(*n);
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
}
}  // namespace detail

template <typename Scalar>
std::uint64_t Tensor<Scalar>::kink_signature() const {
  std::uint64_t h = 1469598103934665603ULL;
  detail::visit_graph(node_.get(), [&](const Node<Scalar>& n) {
    h = detail::fnv1a(&n.kink_signature, sizeof(n.kink_signature), h);
  });
  return h;
}

template <typename Scalar>
bool Tensor<Scalar>::touched_kink() const {
  bool kink = false;
  detail::visit_graph(node_.get(), [&](const Node<Scalar>& n) { kink = kink || n.at_kink; });
  return kink;
}

}  // namespace lumbarseg::ad
