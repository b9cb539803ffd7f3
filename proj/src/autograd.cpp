#include "aspan/autograd.hpp"

#include <unordered_set>

#include "aspan/errors.hpp"

namespace aspan {
namespace {
thread_local bool g_grad_enabled = true;
}

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape());
  return grad;
}

void Node::accumulate(const Tensor& g, double scale) {
  Tensor& buf = grad_buffer();
  add_inplace(buf, g, scale);
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.shape());
  return node_->grad;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node& self)> backward_fn) {
  bool needs = false;
  if (g_grad_enabled) {
    for (const Var& p : parents) needs = needs || p.requires_grad();
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (Var& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (!root.defined() || root.size() != 1) throw DimensionError("backward requires a single-element root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS; reversed it is a valid reverse-topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

}  // namespace aspan
