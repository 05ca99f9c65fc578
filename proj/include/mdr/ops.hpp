#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mdr/tensor.hpp"

namespace mdr {

enum class Activation { tanh, sigmoid, hardswish, relu };

Activation parse_activation(std::string_view name);
std::string to_string(Activation kind);

// Elementwise binary ops with numpy-style broadcasting (size-1 axes expand,
// missing leading axes are treated as size 1). Gradients are reduced back to
// each operand's own shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
inline Tensor broadcast_add(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor broadcast_mul(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor activation(const Tensor& x, Activation kind);

/// While alive, relu and hardswish calls on this thread hash which linear piece
/// every input element falls on. Equal signatures across two forward passes
/// mean no element crossed a kink between them.
class PieceRecorder {
 public:
  PieceRecorder();
  ~PieceRecorder();
  PieceRecorder(const PieceRecorder&) = delete;
  PieceRecorder& operator=(const PieceRecorder&) = delete;

  std::uint64_t signature() const { return hash_; }
  void reset() { hash_ = kSeed; }
  void record(std::span<const double> values, Activation kind);

 private:
  static constexpr std::uint64_t kSeed = 1469598103934665603ull;
  std::uint64_t hash_ = kSeed;
  PieceRecorder* previous_;
};

/// Matrix product. Supports (n,k)x(k,m), batched (B,n,k)x(B,k,m) where either
/// batch extent may be 1, and (B,n,k)x(k,m) with a shared right operand.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

/// Per-position channel mixing: x (C_in,T,V), w (C_out,C_in), bias (C_out).
Tensor conv1x1(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias = std::nullopt);

/// 1-D convolution along frames with symmetric zero padding (k-1)/2.
/// x (C,T,V), w (C_out,C,k) with odd k < 2T; output frames ceil(T/stride).
Tensor temporal_conv(const Tensor& x, const Tensor& w, std::size_t stride = 1);

/// Reductions keep the reduced axis with extent 1.
Tensor mean_over_axis(const Tensor& x, std::size_t axis);
Tensor sum_over_axis(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Rows of a rank-2 tensor selected by index (repeats allowed).
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

}  // namespace mdr
