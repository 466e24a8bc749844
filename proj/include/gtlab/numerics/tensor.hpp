#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace gtlab {

enum class DType { fp32, fp64 };

template <typename Real>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<Real, float> || std::is_same_v<Real, double>,
                "tensors hold fp32 or fp64 values");
  return std::is_same_v<Real, float> ? DType::fp32 : DType::fp64;
}

inline const char* dtype_name(DType d) { return d == DType::fp32 ? "fp32" : "fp64"; }

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? ", " : "") << shape[i];
  }
  os << ')';
  return os.str();
}

namespace detail {

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename Real>
struct Node {
  Shape shape;
  std::vector<Real> values;
  std::vector<Real> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  bool released = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<Real>& grad_buffer() {
    if (grad.empty()) {
      grad.assign(values.size(), Real{0});
    }
    return grad;
  }
};

}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Disables graph construction for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Real>
class Tensor {
 public:
  using value_type = Real;
  using NodePtr = std::shared_ptr<detail::Node<Real>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<Real>>()) {
    if (shape.empty()) {
      throw TensorError("tensor shape must have at least one extent");
    }
    for (auto extent : shape) {
      if (extent == 0) {
        throw TensorError("tensor extents must be positive, got " + shape_str(shape));
      }
    }
    if (shape_numel(shape) != values.size()) {
      throw TensorError("shape " + shape_str(shape) + " does not match buffer of " +
                        std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
    check_finite("construct");
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, Real{0}), requires_grad);
  }

  static Tensor full(Shape shape, Real value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, value), requires_grad);
  }

  static Tensor scalar(Real value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  static constexpr DType dtype() { return dtype_of<Real>(); }

  const Shape& shape() const { return node().shape; }
  std::size_t dim(std::size_t axis) const { return node().shape.at(axis); }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t numel() const { return node().values.size(); }
  bool is_scalar() const { return numel() == 1; }

  std::span<const Real> values() const { return node().values; }
  Real item() const {
    if (!is_scalar()) {
      throw TensorError("item() on non-scalar tensor " + shape_str(shape()));
    }
    return node().values[0];
  }

  // Leaves only: the optimizer and checkpoint loader write parameters in place.
  std::span<Real> mutable_values() {
    if (!node().is_leaf) {
      throw TensorError("in-place write to a non-leaf tensor");
    }
    return node().values;
  }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool flag) {
    if (!node().is_leaf) {
      throw TensorError("requires_grad can only be set on leaves");
    }
    node().requires_grad = flag;
  }

  bool has_grad() const { return !node().grad.empty(); }
  std::span<const Real> grad() const { return node().grad; }
  // Gradient with an absent buffer read as zeros.
  std::vector<Real> grad_or_zeros() const {
    const auto& g = node().grad;
    return g.empty() ? std::vector<Real>(numel(), Real{0}) : g;
  }
  void zero_grad() { node().grad.clear(); }

  bool is_leaf() const { return node().is_leaf; }

  void check_finite(const char* where) const {
    for (Real v : node().values) {
      if (!std::isfinite(v)) {
        throw TensorError(std::string("non-finite value produced by ") + where);
      }
    }
  }

  // Builds the result of an op. `backward` receives the output node whose
  // grad buffer is populated and must accumulate into parent grads.
  static Tensor from_op(Shape shape, std::vector<Real> values, std::vector<Tensor> inputs,
                        std::function<void(detail::Node<Real>&)> backward, const char* name) {
    for (Real v : values) {
      if (!std::isfinite(v)) {
        throw TensorError(std::string("non-finite value produced by ") + name);
      }
    }
    Tensor out(std::move(shape), std::move(values), false);
    if (!grad_enabled()) {
      return out;
    }
    bool needs = false;
    for (const auto& in : inputs) {
      needs = needs || in.requires_grad();
    }
    if (!needs) {
      return out;
    }
    auto& n = out.node();
    n.requires_grad = true;
    n.is_leaf = false;
    for (auto& in : inputs) {
      n.parents.push_back(in.node_);
    }
    n.backward_fn = std::move(backward);
    return out;
  }

  const NodePtr& node_ptr() const { return node_; }
  detail::Node<Real>& node() const {
    if (!node_) {
      throw TensorError("use of an undefined tensor");
    }
    return *node_;
  }

 private:
  NodePtr node_;
};

// Reverse-mode sweep from a scalar root. Intermediates are released after the
// sweep; a second backward through them is an error.
template <typename Real>
void backward(const Tensor<Real>& root) {
  if (!root.is_scalar()) {
    throw TensorError("backward() requires a scalar root, got " + shape_str(root.shape()));
  }
  using NodeT = detail::Node<Real>;
  auto* root_node = &root.node();
  if (root_node->released) {
    throw TensorError("backward() through a graph whose intermediates were released");
  }
  if (!root_node->requires_grad) {
    return;
  }

  // Post-order DFS; `order` owns the nodes so releasing parent links during
  // the sweep cannot free a node that is still pending.
  std::vector<std::shared_ptr<NodeT>> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<std::shared_ptr<NodeT>, std::size_t>> stack;
  stack.emplace_back(root.node_ptr(), 0);
  seen.insert(root_node);
  while (!stack.empty()) {
    auto n = stack.back().first;
    auto& next = stack.back().second;
    if (n->released) {
      throw TensorError("backward() through a graph whose intermediates were released");
    }
    if (next < n->parents.size()) {
      auto p = n->parents[next++];
      if (p->requires_grad && !seen.count(p.get())) {
        seen.insert(p.get());
        stack.emplace_back(std::move(p), 0);
      }
    } else {
      order.push_back(std::move(n));
      stack.pop_back();
    }
  }

  root_node->grad_buffer().assign(1, Real{1});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = it->get();
    if (n->is_leaf) {
      continue;
    }
    n->grad_buffer();
    if (n->backward_fn) {
      n->backward_fn(*n);
    }
    n->backward_fn = nullptr;
    n->parents.clear();
    n->released = true;
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

}  // namespace gtlab
