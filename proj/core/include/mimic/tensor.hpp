#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap shared handle onto a graph node. Operations on tensors
// that require gradients record their inputs and a backward rule; `backward`
// walks the recorded graph from a scalar loss. Recording can be suspended for
// inference with NoGradGuard.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mimic {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view of the values. Only meaningful on leaves; mutating a
  /// tensor that already feeds a recorded graph invalidates that graph.
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;

  /// Same values, no graph history, requires_grad == false.
  Tensor detach() const;
  /// Deep copy of the values into a fresh leaf.
  Tensor clone() const;

  /// Identity of the underlying node; stable for the tensor's lifetime.
  const void* id() const noexcept { return node_.get(); }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Named tensors; ordering by name gives a stable iteration order.
using TensorMap = std::map<std::string, Tensor>;

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

// Elementwise binary ops broadcast with numpy rules.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& x, double factor);
Tensor operator*(double factor, const Tensor& x);
Tensor operator+(const Tensor& x, double value);
Tensor operator-(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
/// Softmax along the last axis.
Tensor softmax(const Tensor& x);

/// [m,k]x[k,n], [b,m,k]x[b,k,n], or [b,m,k]x[k,n] (shared right operand).
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
/// out.flat[i] = index[i] < 0 ? 0 : x.flat[index[i]]; gradient scatters back.
Tensor gather(const Tensor& x, std::vector<std::int64_t> index, Shape out_shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduces every axis but the last: [..., c] -> [c].
Tensor sum_rows(const Tensor& x);
Tensor mean_rows(const Tensor& x);
/// Column maxima of [t, c] -> [c]; gradient routes to the first argmax.
Tensor max_rows(const Tensor& x);
/// sum(|a - b|) over equal-shaped operands.
Tensor l1_distance_sum(const Tensor& a, const Tensor& b);

/// Gradients of a scalar `loss` with respect to `params`. Parameters the loss
/// does not reach receive zero tensors of their own shape.
TensorMap backward(const Tensor& loss, const TensorMap& params);
/// Positional variant used by gradient checks.
std::vector<Tensor> backward(const Tensor& loss, std::span<const Tensor> params);

}  // namespace mimic
