#pragma once

// Dense tensors with reverse-mode automatic differentiation.  Every op that
// runs while gradients are enabled appends a node holding a backward closure;
// backward() walks the graph once in reverse topological order and
// accumulates into leaf gradients.  All op outputs are checked for non-finite
// values at creation time so a NaN is reported at its source op.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "common.hpp"

namespace slt {

inline thread_local bool g_grad_enabled = true;

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
  ~NoGradGuard() { g_grad_enabled = prev; }
};

template <typename S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until touched by backward / parameter init
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode<S>>> parents;
  std::function<void(TensorNode<S>&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
  }
};

template <typename S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<S>> n) : node_(std::move(n)) {}

  static Tensor zeros(const Shape& shape) {
    return filled(shape, S(0));
  }

  static Tensor filled(const Shape& shape, S v) {
    auto n = std::make_shared<TensorNode<S>>();
    validate_shape(shape);
    n->shape = shape;
    n->value.assign(static_cast<size_t>(slt::numel(shape)), v);
    return Tensor(n);
  }

  static Tensor from_data(const Shape& shape, std::vector<S> data) {
    validate_shape(shape);
    check(static_cast<int64_t>(data.size()) == slt::numel(shape),
          "from_data: ", data.size(), " values for shape ", shape_str(shape));
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = shape;
    n->value = std::move(data);
    return Tensor(n);
  }

  static Tensor scalar(S v) { return filled({1}, v); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t dim(int64_t i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return node_->numel(); }

  std::vector<S>& data() { return node_->value; }
  const std::vector<S>& data() const { return node_->value; }
  std::vector<S>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<S>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    if (v) node_->ensure_grad();
    return *this;
  }

  S item() const {
    check(numel() == 1, "item: tensor has ", numel(), " elements");
    return node_->value[0];
  }

  const char* op_name() const { return node_->op; }
  std::shared_ptr<TensorNode<S>> node() const { return node_; }

  void zero_grad() {
    node_->grad.assign(node_->value.size(), S(0));
  }

  // Reverse-mode sweep from a scalar.  Visits each reachable node exactly
  // once; fan-out accumulates because every closure uses +=.  Closures are
  // dropped after use so a second sweep over the same graph is rejected.
  void backward() const {
    check(node_ != nullptr, "backward: undefined tensor");
    check(numel() == 1, "backward: loss must be scalar, has shape ",
          shape_str(shape()));
    std::vector<TensorNode<S>*> order;
    std::unordered_set<TensorNode<S>*> seen;
    topo(node_.get(), seen, order);
    node_->ensure_grad();
    node_->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorNode<S>* n = *it;
      if (!n->parents.empty()) {
        check(static_cast<bool>(n->backward_fn),
              "backward: node '", n->op,
              "' already consumed; call backward only once per graph");
        n->backward_fn(*n);
        n->backward_fn = nullptr;  // free closure, enforce single sweep
      }
    }
  }

 private:
  static void validate_shape(const Shape& s) {
    for (int64_t d : s) check(d > 0, "shape extents must be positive, got ",
                              shape_str(s));
  }

  // Iterative DFS; recursion would overflow on long chains (e.g. LSTM rolls).
  static void topo(TensorNode<S>* root, std::unordered_set<TensorNode<S>*>& seen,
                   std::vector<TensorNode<S>*>& order) {
    std::vector<std::pair<TensorNode<S>*, size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        TensorNode<S>* p = n->parents[i++].get();
        if (seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<TensorNode<S>> node_;
};

namespace detail {

template <typename S>
void check_finite(const std::vector<S>& v, const char* op) {
  for (S x : v)
    if (!std::isfinite(static_cast<double>(x)))
      fail("non-finite value produced by op '", op, "'");
}

// Build a result node: checks finiteness, and records parents + closure only
// when gradients are enabled and some parent requires them.
template <typename S>
Tensor<S> make_node(const char* op, Shape shape, std::vector<S> value,
                    std::vector<Tensor<S>> parents,
                    std::function<void(TensorNode<S>&)> backward) {
  check_finite(value, op);
  auto n = std::make_shared<TensorNode<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool need = false;
  if (g_grad_enabled)
    for (auto& p : parents)
      if (p.node()->requires_grad || !p.node()->parents.empty()) need = true;
  if (need) {
    n->requires_grad = true;
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward);
  }
  return Tensor<S>(n);
}

}  // namespace detail

}  // namespace slt
