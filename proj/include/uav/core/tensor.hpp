#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "uav/core/errors.hpp"

namespace uav {

using Shape = std::vector<std::size_t>;

enum class Mode { train, eval };

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

template <std::floating_point T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into the parents that require grad.
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad;
  }
};

template <std::floating_point T>
void check_finite(std::span<const T> values, std::string_view where) {
  for (const T v : values) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(where) + ": non-finite value produced");
  }
}

}  // namespace detail

/// Dense row-major tensor handle with reverse-mode gradients.
///
/// Copies share the underlying node; use clone() for an independent value.
/// Values are immutable once constructed except through mutable_data(), which
/// exists for parameter updates.
template <std::floating_point T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  BasicTensor() = default;

  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false) : node_(std::make_shared<detail::Node<T>>()) {
    if (shape.empty()) throw ShapeError("tensor: empty shape");
    for (const auto d : shape) {
      if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not hold " + std::to_string(data.size()) + " values");
    }
    detail::check_finite<T>(data, "tensor");
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }

  static BasicTensor scalar(T value, bool requires_grad = false) { return BasicTensor({1}, {value}, requires_grad); }

  [[nodiscard]] bool defined() const noexcept { return static_cast<bool>(node_); }
  [[nodiscard]] const Shape& shape() const { return node_->shape; }
  [[nodiscard]] std::size_t rank() const { return node_->shape.size(); }
  [[nodiscard]] std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  [[nodiscard]] std::size_t numel() const { return node_->data.size(); }
  [[nodiscard]] std::span<const T> data() const { return node_->data; }
  [[nodiscard]] std::span<T> mutable_data() { return node_->data; }
  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  [[nodiscard]] bool has_grad() const { return !node_->grad.empty(); }
  [[nodiscard]] std::span<const T> grad() const { return node_->grad; }
  [[nodiscard]] std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  [[nodiscard]] T item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
    return node_->data[0];
  }

  [[nodiscard]] T at(std::size_t row, std::size_t col) const {
    if (rank() != 2) throw ShapeError("at: expected rank 2, got " + shape_str(shape()));
    return node_->data[row * dim(1) + col];
  }

  /// Deep copy that keeps requires_grad but drops history and gradients.
  [[nodiscard]] BasicTensor clone() const { return BasicTensor(shape(), node_->data, requires_grad()); }

  /// Same values, no history, requires_grad = false.
  [[nodiscard]] BasicTensor detach() const { return BasicTensor(shape(), node_->data, false); }

  /// Reverse-mode sweep from this tensor, seeding d(self) = seed everywhere.
  void backward(T seed = T{1}) const;

  [[nodiscard]] const NodePtr& node() const { return node_; }

  /// Builds an op result. History is recorded only when a parent needs it.
  static BasicTensor from_op(Shape shape, std::vector<T> data, std::vector<BasicTensor> parents,
                             std::function<void(detail::Node<T>&)> backward, std::string_view op) {
    detail::check_finite<T>(data, op);
    BasicTensor out;
    out.node_ = std::make_shared<detail::Node<T>>();
    out.node_->shape = std::move(shape);
    out.node_->data = std::move(data);
    const bool needs = std::any_of(parents.begin(), parents.end(), [](const BasicTensor& p) { return p.requires_grad(); });
    if (needs) {
      out.node_->requires_grad = true;
      out.node_->parents.reserve(parents.size());
      for (auto& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

 private:
  NodePtr node_;
};

using Tensor = BasicTensor<float>;

template <std::floating_point T>
void BasicTensor<T>::backward(T seed) const {
  if (!node_->requires_grad) return;
  // Iterative post-order DFS gives a topological order without recursion limits.
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> seen;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      auto* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  auto& g = node_->grad_buffer();
  for (auto& v : g) v += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>& n = **it;
    if (n.backward && !n.grad.empty()) n.backward(n);
  }
}

}  // namespace uav
