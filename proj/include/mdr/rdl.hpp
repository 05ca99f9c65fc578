#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>

#include "mdr/tensor.hpp"

namespace mdr::loss {

using Labels = std::span<const std::size_t>;

/// Learnable per-class embedding centers, updated outside the autodiff tape.
struct ClassCenters {
  static constexpr double kNormFloor = 1e-8;

  Tensor c;  // (M, D)
  double epsilon = 0.0;
  double center_lr = 0.5;

  std::size_t num_classes() const { return c.dim(0); }
  std::size_t dim() const { return c.dim(1); }

  /// Random unit directions scaled to norm sqrt(D).
  static ClassCenters init(std::size_t num_classes, std::size_t dim, std::mt19937_64& rng);
  static ClassCenters from_tensor(Tensor c, double epsilon = 0.0, double center_lr = 0.5);
};

enum class Reduction { sum, mean };

Reduction parse_reduction(const std::string& name);

struct RdlConfig {
  /// Weights of the inter-class and norm terms; unset means 1/N of the batch.
  std::optional<double> lambda1;
  std::optional<double> lambda2;
  bool use_a_in = true;
  bool use_a_out = true;
  bool use_l = true;
  /// Reverse the inter-class gradient so training ascends that term. Diagnostic only.
  bool ascend_a_out = false;

  double weight1(std::size_t batch) const;
  double weight2(std::size_t batch) const;
  void validate() const;
};

struct RdlTerms {
  double a_in = 0.0;
  double a_out = 0.0;
  double l = 0.0;
  double total = 0.0;
};

/// (1/N) sum (1 - cos<x_i, c_{y_i}>)^2, in [0, 4].
double loss_a_in(const Tensor& x, Labels labels, const ClassCenters& centers);
/// -(1/N) sum (1 - 1/(M-1) sum_{k != y_i} cos<x_i, c_k>), in [-2, 0].
double loss_a_out(const Tensor& x, Labels labels, const ClassCenters& centers);
/// (1/N) sum (1 - beta_i)^2 with beta_i = |x_i| / (|c_{y_i}| + eps).
double loss_l(const Tensor& x, Labels labels, const ClassCenters& centers);

RdlTerms rdl_terms(const Tensor& x, Labels labels, const ClassCenters& centers, const RdlConfig& cfg);
double rdl(const Tensor& x, Labels labels, const ClassCenters& centers, const RdlConfig& cfg);

/// Closed-form d(rdl)/dX, shape (N, D).
Tensor rdl_grad_x(const Tensor& x, Labels labels, const ClassCenters& centers, const RdlConfig& cfg);
/// Closed-form d(rdl)/dC, shape (M, D).
Tensor rdl_grad_c(const Tensor& x, Labels labels, const ClassCenters& centers, const RdlConfig& cfg);
/// c <- c - center_lr * d(rdl)/dC, then rows below the norm floor are rescaled to it.
void update_centers(ClassCenters& centers, const Tensor& x, Labels labels, const RdlConfig& cfg);

/// Softmax cross-entropy on (N, M) logits as a tape op. The batch sum matches
/// the written objective; mean is available for comparison.
Tensor softmax_ce(const Tensor& logits, Labels labels, Reduction reduction = Reduction::sum);

/// RDL as a tape op over embeddings (N, D); its backward is rdl_grad_x.
Tensor rdl_loss(const Tensor& x, Labels labels, const ClassCenters& centers, const RdlConfig& cfg);

/// softmax_ce + rdl_loss (RDL omitted when `with_rdl` is false).
Tensor total_loss(const Tensor& logits, const Tensor& x, Labels labels, const ClassCenters& centers,
                  const RdlConfig& cfg, Reduction reduction, bool with_rdl = true);

/// RDL assembled from generic differentiable ops; differentiating it by
/// the tape is an independent route to both X and C gradients.
Tensor rdl_composite(const Tensor& x, const Tensor& c, Labels labels, double epsilon,
                     const RdlConfig& cfg);

/// Compactness diagnostics of a labelled embedding batch.
struct EmbeddingStats {
  double intra_cos = 0.0;  // mean cos<x_i, c_{y_i}>
  double inter_cos = 0.0;  // mean over samples of mean_{k != y_i} cos<x_i, c_k>
  double beta = 0.0;       // mean |x_i| / (|c_{y_i}| + eps)
};

EmbeddingStats embedding_stats(const Tensor& x, Labels labels, const Tensor& c, double epsilon = 0.0);

}  // namespace mdr::loss
