#pragma once

// Reverse-mode differentiation over a dynamically built graph. A Var pairs a
// value tensor with a lazily allocated gradient of the same shape; every op
// result keeps its parents alive and a closure that pushes its gradient to
// them. Gradients accumulate additively across uses.

#include <functional>
#include <memory>
#include <vector>

#include "aspan/tensor.hpp"

namespace aspan {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node& self)> backward;

  Tensor& grad_buffer();
  void accumulate(const Tensor& g, double scale = 1.0);
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var parameter(Tensor value) { return Var(std::move(value), true); }
  static Var constant(Tensor value) { return Var(std::move(value), false); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  // Mutable access for optimizers; never use on non-leaf nodes.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Zero-filled tensor if nothing has been accumulated yet.
  Tensor grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor(); }

  Var detach() const { return Var::constant(node_->value); }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Builds an op result. If grad mode is off or no parent requires a gradient the
// result is a constant leaf and `backward` is dropped.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node& self)> backward);

// Seeds d(root)/d(root) = 1 (root must hold one element) and propagates to every
// ancestor that requires a gradient.
void backward(const Var& root);

bool grad_enabled();

// Disables graph construction on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace aspan
