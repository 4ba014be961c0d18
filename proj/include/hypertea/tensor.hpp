#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace hypertea {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Thrown when an operation produces NaN/Inf, or when the forward/reverse
// contracts are violated (shape mismatch, non-scalar loss, ...).
class NumericsError : public std::runtime_error {
 public:
  explicit NumericsError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool& finite_check_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording for the enclosing scope (inference, oracles).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  static_assert(std::is_floating_point_v<T>);

  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // sized lazily by backward()
  bool requires_grad = false;
  const char* op = "leaf";
  std::string name;  // set for named parameters, used in diagnostics
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into the parents' grad buffers.
  std::function<void(Node&)> backprop;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }

  std::string label() const {
    std::string s = op;
    if (!name.empty()) s += " '" + name + "'";
    return s;
  }
};

template <typename T>
void check_finite(const std::vector<T>& v, const Node<T>& node, const char* stage) {
  if (!detail::finite_check_flag()) return;
  for (size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericsError(std::string("non-finite value in ") + stage + " of " +
                          node.label() + " at flat index " + std::to_string(i));
    }
  }
}

// Dense row-major tensor handle with reverse-mode differentiation. Copies are
// shallow: they share the underlying node, as computation-graph edges do.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T v, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(numel_of(t.node_->shape), v);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (numel_of(shape) != static_cast<int64_t>(data.size())) {
      throw NumericsError("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t dim(size_t i) const { return node_->shape[i]; }
  size_t rank() const { return node_->shape.size(); }
  int64_t numel() const { return node_->numel(); }

  std::vector<T>& data() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }

  T item() const {
    if (numel() != 1) {
      throw NumericsError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  const std::string& name() const { return node_->name; }
  void set_name(std::string n) { node_->name = std::move(n); }

  // Gradient buffer; empty means "no gradient accumulated", i.e. zero.
  const std::vector<T>& grad() const { return node_->grad; }

  std::vector<T> grad_or_zeros() const {
    if (node_->grad.empty()) return std::vector<T>(numel(), T(0));
    return node_->grad;
  }

  void zero_grad() const { node_->grad.clear(); }

  // Leaf copy of the values, detached from the graph.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    t.node_->requires_grad = false;
    return t;
  }

  // Reverse pass from a scalar. Visits each reachable node once in reverse
  // topological order; fan-out accumulates additively.
  void backward() const {
    if (numel() != 1) {
      throw NumericsError("backward() requires a scalar, got shape " + shape_str(shape()));
    }
    if (!node_->requires_grad) {
      throw NumericsError("backward() on a tensor that does not require grad");
    }

    std::vector<Node<T>*> order;
    topo_order(node_.get(), order);

    // Leaf gradients accumulate across calls (callers zero_grad between
    // optimizer steps); buffers are only allocated here, never reset.
    for (Node<T>* n : order) {
      if (n->grad.size() != n->value.size()) n->grad.assign(n->value.size(), T(0));
    }
    node_->grad[0] += T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      check_finite(n->grad, *n, "reverse pass");
      if (n->backprop) n->backprop(*n);
    }
  }

  std::shared_ptr<Node<T>> node() const { return node_; }

  static Tensor wrap(std::shared_ptr<Node<T>> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  static void topo_order(Node<T>* root, std::vector<Node<T>*>& order) {
    // Iterative post-order DFS, pruned to the differentiable subgraph.
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        Node<T>* p = n->parents[idx++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node<T>> node_;
};

// Builds an op node. `backprop` may be empty for non-differentiable ops.
template <typename T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value,
                  std::vector<std::shared_ptr<Node<T>>> parents,
                  std::function<void(Node<T>&)> backprop) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  check_finite(node->value, *node, "forward");

  bool rg = false;
  if (grad_mode_enabled()) {
    for (const auto& p : parents) rg = rg || p->requires_grad;
  }
  node->requires_grad = rg;
  if (rg) {
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return Tensor<T>::wrap(std::move(node));
}

// Gradient accumulation helper: parents' buffers are sized on first touch.
template <typename T>
std::vector<T>& grad_buffer(Node<T>& n) {
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), T(0));
  return n.grad;
}

}  // namespace hypertea
