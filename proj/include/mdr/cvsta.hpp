#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mdr/ops.hpp"
#include "mdr/skeleton_graph.hpp"
#include "mdr/tensor.hpp"

namespace mdr::nn {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Width of the attention middle space. Either C_in / divisor (floored, at
/// least 1) or "fixed", which lifts the input straight to C_out.
struct CMidRule {
  std::size_t divisor = 8;
  bool fixed = false;

  std::size_t resolve(std::size_t in_channels, std::size_t out_channels) const;
  static CMidRule parse(const std::string& text);
  std::string str() const;
};

/// Weights of one channel-variable spatial-temporal attention unit.
struct CvstaParams {
  Tensor w_mid;    // (C_mid, C_in)  shared pooling branch
  Tensor w_s_mid;  // (C_mid, C_in)  spatial-topology branch
  Tensor w_tv;     // (C_out, C_mid) saliency projection
  Tensor w_s;      // (C_out, C_mid) topology projection
  Tensor w_trans;  // (C_out, C_in)  feature transformation
  Activation sigma = Activation::tanh;

  std::size_t in_channels() const { return w_mid.dim(1); }
  std::size_t mid_channels() const { return w_mid.dim(0); }
  std::size_t out_channels() const { return w_tv.dim(0); }

  /// Uniform init in +-sqrt(1/fan_in) per weight.
  static CvstaParams init(std::size_t in_channels, std::size_t mid_channels,
                          std::size_t out_channels, Activation sigma, std::mt19937_64& rng);
  void named(const std::string& prefix, NamedTensors& out) const;
};

/// Intermediate tensors of one attention unit, kept for export and tests.
struct CvstaTrace {
  Tensor f_mid;     // (C_mid, T, V)
  Tensor f_t;       // (C_mid, T, 1)
  Tensor f_v;       // (C_mid, 1, V)
  Tensor f_r;       // (C_out, T, V) saliency weights
  Tensor f_tv;      // (C_out, T, V) transformed features
  Tensor refined;   // (C_out, T, V) R = f_r * f_tv
  Tensor f_s;       // (C_mid, V, 1)
  Tensor topology;  // (C_out, V, V) channel-wise joint correlations
};

CvstaTrace cvsta_trace(const Tensor& x, const CvstaParams& p);

/// f_R = W_TV sigma(f_T * f_V), with f_T / f_V the frame / joint averages of conv(x, w_mid).
Tensor cvsta_saliency(const Tensor& x, const CvstaParams& p);
/// R = f_R (Hadamard) conv(x, w_trans).
Tensor cvsta_refine(const Tensor& x, const CvstaParams& p);
/// A~ = W_S sigma(f_V + f_S), broadcast to (C_mid, V, V) before projection.
/// Entry (c, u, v) couples source joint u with target joint v.
Tensor spatial_topology(const Tensor& x, const CvstaParams& p);

/// Graph convolution block: one attention unit and one learnable balance
/// scalar per adjacency subset.
struct GcbParams {
  std::vector<CvstaParams> subsets;
  std::vector<Tensor> alpha;      // K scalars, each shaped (1,1,1)
  std::vector<Tensor> adjacency;  // K constant (1,V,V) matrices

  std::size_t num_subsets() const { return subsets.size(); }
  std::size_t num_joints() const { return adjacency.front().dim(2); }
  std::size_t out_channels() const { return subsets.front().out_channels(); }

  /// alpha starts at zero so the block begins as attention-weighted static-graph convolution.
  static GcbParams init(const graph::SkeletonGraph& g, std::size_t in_channels,
                        std::size_t out_channels, CMidRule c_mid, Activation sigma,
                        std::mt19937_64& rng);
  void named(const std::string& prefix, NamedTensors& out) const;
};

/// out[c,t,v] = sum_k sum_u R_k[c,t,u] (A_k[u,v] + alpha_k A~_k[c,u,v]).
Tensor gcb_forward(const Tensor& x, const GcbParams& p);

}  // namespace mdr::nn
