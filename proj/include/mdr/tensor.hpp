#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mdr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

/// Receives the gradient flowing into an op's output together with the
/// output values, and accumulates into the op's inputs.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<const double> out)>;

struct Node {
  const char* op = "";
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> node;
};

}  // namespace detail

/// Dense row-major double tensor with optional reverse-mode gradient tracking.
///
/// A Tensor is a handle: copies share storage and graph identity, the same way
/// framework tensors do. Values written by an op are never modified again; use
/// detach() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng);
  static Tensor identity(std::size_t n);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Mutable view for initializing leaves. Writing into an op output that
  /// already participates in a graph invalidates its backward pass.
  std::span<double> data_mut();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  /// True for leaves with requires_grad and for outputs of tracked ops.
  bool tracks_grad() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Gradient as a fresh untracked tensor (zeros when nothing was accumulated).
  Tensor grad_tensor() const;
  void zero_grad();

  Tensor detach() const;
  Tensor reshaped_copy(Shape shape) const;

  /// Reverse-mode sweep from a single-element tensor. Leaf gradients
  /// accumulate across calls until zero_grad().
  void backward() const;

  const char* op_name() const;
  detail::TensorImpl* impl() const { return impl_.get(); }

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> index) const;
  std::shared_ptr<detail::TensorImpl> impl_;
};

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

bool grad_mode_enabled();

namespace detail {

/// Wraps freshly computed values as an op output and records the backward
/// closure when any input tracks gradients. Rejects non-finite values.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward);

/// Gradient buffer of `t`, allocated on first use; empty when `t` does not
/// track gradients.
std::span<double> grad_sink(const Tensor& t);

}  // namespace detail

}  // namespace mdr
