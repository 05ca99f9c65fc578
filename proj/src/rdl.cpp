#include "mdr/rdl.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mdr/error.hpp"
#include "mdr/ops.hpp"

namespace mdr::loss {

using detail::grad_sink;
using detail::make_result;

ClassCenters ClassCenters::init(std::size_t num_classes, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor c({num_classes, dim});
  auto v = c.data_mut();
  const double target = std::sqrt(static_cast<double>(dim));
  for (std::size_t j = 0; j < num_classes; ++j) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        v[j * dim + d] = gauss(rng);
        norm += v[j * dim + d] * v[j * dim + d];
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-6);
    for (std::size_t d = 0; d < dim; ++d) v[j * dim + d] *= target / norm;
  }
  return from_tensor(c);
}

ClassCenters ClassCenters::from_tensor(Tensor c, double epsilon, double center_lr) {
  if (c.rank() != 2) throw ShapeError("class centers must be (M, D), got " + shape_str(c.shape()));
  if (epsilon < 0.0) throw ConfigError("center epsilon must be nonnegative");
  ClassCenters out;
  out.c = c;
  out.epsilon = epsilon;
  out.center_lr = center_lr;
  return out;
}

Reduction parse_reduction(const std::string& name) {
  if (name == "sum") return Reduction::sum;
  if (name == "mean") return Reduction::mean;
  throw ConfigError("unknown reduction '" + name + "'");
}

double RdlConfig::weight1(std::size_t batch) const {
  return lambda1.value_or(1.0 / static_cast<double>(batch));
}

double RdlConfig::weight2(std::size_t batch) const {
  return lambda2.value_or(1.0 / static_cast<double>(batch));
}

void RdlConfig::validate() const {
  if ((lambda1 && !(*lambda1 < 1.0)) || (lambda2 && !(*lambda2 < 1.0))) {
    throw ConfigError("RDL weights lambda1 and lambda2 must be below 1");
  }
}

namespace {

// Row-wise geometry shared by the value and gradient routines.
struct Geometry {
  std::size_t n = 0, m = 0, d = 0;
  std::vector<double> x_norm;   // N
  std::vector<double> c_norm;   // M
  std::vector<double> cosines;  // N x M
};

Geometry measure(const Tensor& x, Labels labels, const ClassCenters& centers, bool need_angles) {
  if (x.rank() != 2) throw ShapeError("embeddings must be (N, D), got " + shape_str(x.shape()));
  if (x.dim(1) != centers.dim()) {
    throw ShapeError("embeddings " + shape_str(x.shape()) + " do not match centers " +
                     shape_str(centers.c.shape()));
  }
  if (labels.size() != x.dim(0)) {
    throw ShapeError("got " + std::to_string(labels.size()) + " labels for " + std::to_string(x.dim(0)) +
                     " embeddings");
  }
  Geometry g;
  g.n = x.dim(0);
  g.m = centers.num_classes();
  g.d = x.dim(1);
  for (auto y : labels) {
    if (y >= g.m) throw ShapeError("label " + std::to_string(y) + " out of range for " +
                                   std::to_string(g.m) + " classes");
  }
  const auto xv = x.data();
  const auto cv = centers.c.data();
  g.x_norm.resize(g.n);
  g.c_norm.resize(g.m);
  for (std::size_t i = 0; i < g.n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < g.d; ++k) s += xv[i * g.d + k] * xv[i * g.d + k];
    g.x_norm[i] = std::sqrt(s);
  }
  for (std::size_t j = 0; j < g.m; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < g.d; ++k) s += cv[j * g.d + k] * cv[j * g.d + k];
    g.c_norm[j] = std::sqrt(s);
  }
  if (need_angles) {
    for (std::size_t i = 0; i < g.n; ++i) {
      if (g.x_norm[i] == 0.0) {
        throw DegenerateInputError("embedding " + std::to_string(i) + " has zero norm; angle undefined");
      }
    }
    for (std::size_t j = 0; j < g.m; ++j) {
      if (g.c_norm[j] == 0.0) {
        throw DegenerateInputError("center " + std::to_string(j) + " has zero norm; angle undefined");
      }
    }
    g.cosines.resize(g.n * g.m);
    for (std::size_t i = 0; i < g.n; ++i) {
      for (std::size_t j = 0; j < g.m; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < g.d; ++k) dot += xv[i * g.d + k] * cv[j * g.d + k];
        g.cosines[i * g.m + j] = dot / (g.x_norm[i] * g.c_norm[j]);
      }
    }
  }
  return g;
}

void require_batch(const Tensor& x) {
  if (x.rank() == 2 && x.dim(0) == 0) throw DegenerateInputError("empty batch");
}

double ratio_denominator(const Geometry& g, std::size_t cls, double epsilon) {
  const double den = g.c_norm[cls] + epsilon;
  if (den == 0.0) {
    throw DegenerateInputError("center " + std::to_string(cls) + " has zero norm and epsilon is 0");
  }
  return den;
}

double a_in_value(const Geometry& g, Labels labels) {
  double s = 0.0;
  for (std::size_t i = 0; i < g.n; ++i) {
    const double r = 1.0 - g.cosines[i * g.m + labels[i]];
    s += r * r;
  }
  return s / static_cast<double>(g.n);
}

double a_out_value(const Geometry& g, Labels labels) {
  if (g.m < 2) throw DegenerateInputError("inter-class angular loss needs at least two classes");
  double s = 0.0;
  for (std::size_t i = 0; i < g.n; ++i) {
    double others = 0.0;
    for (std::size_t k = 0; k < g.m; ++k) {
      if (k != labels[i]) others += g.cosines[i * g.m + k];
    }
    s += 1.0 - others / static_cast<double>(g.m - 1);
  }
  return -s / static_cast<double>(g.n);
}

double l_value(const Geometry& g, Labels labels, double epsilon) {
  double s = 0.0;
  for (std::size_t i = 0; i < g.n; ++i) {
    const double beta = g.x_norm[i] / ratio_denominator(g, labels[i], epsilon);
    s += (1.0 - beta) * (1.0 - beta);
  }
  return s / static_cast<double>(g.n);
}

}  // namespace

double loss_a_in(const Tensor& x, Labels labels, const ClassCenters& centers) {
  require_batch(x);
  return a_in_value(measure(x, labels, centers, true), labels);
}

double loss_a_out(const Tensor& x, Labels labels, const ClassCenters& centers) {
  require_batch(x);
  return a_out_value(measure(x, labels, centers, true), labels);
}

double loss_l(const Tensor& x, Labels labels, const ClassCenters& centers) {
  require_batch(x);
  return l_value(measure(x, labels, centers, false), labels, centers.epsilon);
}

RdlTerms rdl_terms(const Tensor& x, Labels labels, const ClassCenters& centers, const RdlConfig& cfg) {
  require_batch(x);
  cfg.validate();
  const bool angles = cfg.use_a_in || cfg.use_a_out;
  const Geometry g = measure(x, labels, centers, angles);
  RdlTerms t;
  if (cfg.use_a_in) t.a_in = a_in_value(g, labels);
  if (cfg.use_a_out) t.a_out = a_out_value(g, labels);
  if (cfg.use_l) t.l = l_value(g, labels, centers.epsilon);
  t.total = t.a_in + cfg.weight1(g.n) * t.a_out + cfg.weight2(g.n) * t.l;
  return t;
}

double rdl(const Tensor& x, Labels labels, const ClassCenters& centers, const RdlConfig& cfg) {
  return rdl_terms(x, labels, centers, cfg).total;
}

namespace {

// Accumulates `factor` * d cos<a, b> / d a into out, where cos = cosines, |a| = na, |b| = nb.
void add_cos_grad(double factor, const double* a, double na, const double* b, double nb, double cos,
                  std::size_t d, double* out) {
  for (std::size_t k = 0; k < d; ++k) out[k] += factor * (b[k] / nb - cos * a[k] / na) / na;
}

struct RdlGradients {
  std::vector<double> gx;  // N x D
  std::vector<double> gc;  // M x D
};

RdlGradients rdl_gradients(const Tensor& x, Labels labels, const ClassCenters& centers,
                           const RdlConfig& cfg, bool want_x, bool want_c) {
  require_batch(x);
  cfg.validate();
  const bool angles = cfg.use_a_in || cfg.use_a_out;
  const Geometry g = measure(x, labels, centers, angles);
  if (cfg.use_a_out && g.m < 2) {
    throw DegenerateInputError("inter-class angular loss needs at least two classes");
  }
  const auto xv = x.data();
  const auto cv = centers.c.data();
  const double n = static_cast<double>(g.n);
  const double lambda1 = cfg.weight1(g.n);
  const double lambda2 = cfg.weight2(g.n);
  RdlGradients out;
  if (want_x) out.gx.assign(g.n * g.d, 0.0);
  if (want_c) out.gc.assign(g.m * g.d, 0.0);
  for (std::size_t i = 0; i < g.n; ++i) {
    const double* xi = xv.data() + i * g.d;
    const std::size_t y = labels[i];
    const double* cy = cv.data() + y * g.d;
    double* gxi = want_x ? out.gx.data() + i * g.d : nullptr;
    double* gcy = want_c ? out.gc.data() + y * g.d : nullptr;
    if (cfg.use_a_in) {
      const double cos = g.cosines[i * g.m + y];
      const double f = -2.0 / n * (1.0 - cos);
      if (gxi) add_cos_grad(f, xi, g.x_norm[i], cy, g.c_norm[y], cos, g.d, gxi);
      if (gcy) add_cos_grad(f, cy, g.c_norm[y], xi, g.x_norm[i], cos, g.d, gcy);
    }
    if (cfg.use_a_out) {
      const double sign = cfg.ascend_a_out ? -1.0 : 1.0;
      const double f = sign * lambda1 / (n * static_cast<double>(g.m - 1));
      for (std::size_t k = 0; k < g.m; ++k) {
        if (k == y) continue;
        const double* ck = cv.data() + k * g.d;
        const double cos = g.cosines[i * g.m + k];
        if (gxi) add_cos_grad(f, xi, g.x_norm[i], ck, g.c_norm[k], cos, g.d, gxi);
        if (want_c) add_cos_grad(f, ck, g.c_norm[k], xi, g.x_norm[i], cos, g.d, out.gc.data() + k * g.d);
      }
    }
    if (cfg.use_l) {
      const double den = ratio_denominator(g, y, centers.epsilon);
      const double beta = g.x_norm[i] / den;
      if (gxi && g.x_norm[i] > 0.0) {
        // d|x|/dx is undefined at the origin; the zero subgradient is used there.
        const double f = lambda2 * 2.0 / n * (beta - 1.0) / (g.x_norm[i] * den);
        for (std::size_t k = 0; k < g.d; ++k) gxi[k] += f * xi[k];
      }
      if (gcy) {
        const double f = lambda2 * 2.0 / n * (1.0 - beta) * g.x_norm[i] / (g.c_norm[y] * den * den);
        for (std::size_t k = 0; k < g.d; ++k) gcy[k] += f * cy[k];
      }
    }
  }
  return out;
}

}  // namespace

Tensor rdl_grad_x(const Tensor& x, Labels labels, const ClassCenters& centers, const RdlConfig& cfg) {
  auto grads = rdl_gradients(x, labels, centers, cfg, true, false);
  return Tensor(x.shape(), std::move(grads.gx));
}

Tensor rdl_grad_c(const Tensor& x, Labels labels, const ClassCenters& centers, const RdlConfig& cfg) {
  auto grads = rdl_gradients(x, labels, centers, cfg, false, true);
  return Tensor(centers.c.shape(), std::move(grads.gc));
}

void update_centers(ClassCenters& centers, const Tensor& x, Labels labels, const RdlConfig& cfg) {
  const Tensor grad = rdl_grad_c(x, labels, centers, cfg);
  const std::size_t m = centers.num_classes(), d = centers.dim();
  std::vector<double> next(centers.c.data().begin(), centers.c.data().end());
  const auto prev = centers.c.data();
  const auto gv = grad.data();
  for (std::size_t j = 0; j < m; ++j) {
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      next[j * d + k] -= centers.center_lr * gv[j * d + k];
      norm += next[j * d + k] * next[j * d + k];
    }
    norm = std::sqrt(norm);
    if (!std::isfinite(norm)) throw NumericError("center update produced a non-finite center");
    if (norm >= ClassCenters::kNormFloor) continue;
    // Rescale to the floor, keeping the pre-update direction if the row collapsed entirely.
    const double* src = norm > 0.0 ? next.data() + j * d : prev.data() + j * d;
    double src_norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) src_norm += src[k] * src[k];
    src_norm = std::sqrt(src_norm);
    std::vector<double> row(src, src + d);
    for (std::size_t k = 0; k < d; ++k) next[j * d + k] = row[k] * ClassCenters::kNormFloor / src_norm;
  }
  centers.c = Tensor(centers.c.shape(), std::move(next));
}

Tensor softmax_ce(const Tensor& logits, Labels labels, Reduction reduction) {
  if (logits.rank() != 2) throw ShapeError("logits must be (N, M), got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  if (labels.size() != n) throw ShapeError("label count does not match logits");
  for (auto y : labels) {
    if (y >= m) throw ShapeError("label " + std::to_string(y) + " out of range for " + std::to_string(m) +
                                 " classes");
  }
  const auto z = logits.data();
  std::vector<double> probs(n * m);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* zi = z.data() + i * m;
    const double zmax = *std::max_element(zi, zi + m);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      probs[i * m + j] = std::exp(zi[j] - zmax);
      s += probs[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) probs[i * m + j] /= s;
    total += zmax + std::log(s) - zi[labels[i]];
  }
  const double factor = reduction == Reduction::mean ? 1.0 / static_cast<double>(n) : 1.0;
  std::vector<std::size_t> ys(labels.begin(), labels.end());
  return make_result("softmax_ce", Shape{}, {total * factor}, {logits},
                     [logits, probs = std::move(probs), ys = std::move(ys), m, factor](
                         std::span<const double> g, std::span<const double>) {
                       auto gz = grad_sink(logits);
                       if (gz.empty()) return;
                       for (std::size_t i = 0; i < ys.size(); ++i) {
                         for (std::size_t j = 0; j < m; ++j) {
                           const double target = j == ys[i] ? 1.0 : 0.0;
                           gz[i * m + j] += g[0] * factor * (probs[i * m + j] - target);
                         }
                       }
                     });
}

Tensor rdl_loss(const Tensor& x, Labels labels, const ClassCenters& centers, const RdlConfig& cfg) {
  const double value = rdl(x, labels, centers, cfg);
  std::vector<std::size_t> ys(labels.begin(), labels.end());
  ClassCenters frozen = ClassCenters::from_tensor(centers.c.detach(), centers.epsilon, centers.center_lr);
  return make_result("rdl", Shape{}, {value}, {x},
                     [x, ys = std::move(ys), frozen = std::move(frozen), cfg](
                         std::span<const double> g, std::span<const double>) {
                       auto gx = grad_sink(x);
                       if (gx.empty()) return;
                       const Tensor grad = rdl_grad_x(x, ys, frozen, cfg);
                       const auto gv = grad.data();
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * gv[i];
                     });
}

Tensor total_loss(const Tensor& logits, const Tensor& x, Labels labels, const ClassCenters& centers,
                  const RdlConfig& cfg, Reduction reduction, bool with_rdl) {
  Tensor ce = softmax_ce(logits, labels, reduction);
  if (!with_rdl) return ce;
  return add(ce, rdl_loss(x, labels, centers, cfg));
}

Tensor rdl_composite(const Tensor& x, const Tensor& c, Labels labels, double epsilon,
                     const RdlConfig& cfg) {
  if (cfg.ascend_a_out) {
    throw ConfigError("the ascending inter-class gradient has no loss value to differentiate");
  }
  cfg.validate();
  const std::size_t n = x.dim(0), m = c.dim(0);
  const double lambda1 = cfg.weight1(n), lambda2 = cfg.weight2(n);
  const Tensor x_norm = sqrt(sum_over_axis(square(x), 1));  // (N,1)
  const Tensor c_own = gather_rows(c, labels);
  const Tensor c_own_norm = sqrt(sum_over_axis(square(c_own), 1));
  Tensor total = Tensor::scalar(0.0);
  if (cfg.use_a_in) {
    const Tensor cos = div(sum_over_axis(mul(x, c_own), 1), mul(x_norm, c_own_norm));
    total = add(total, mean(square(add_scalar(scale(cos, -1.0), 1.0))));
  }
  if (cfg.use_a_out) {
    const Tensor c_norm_row = transpose(sqrt(sum_over_axis(square(c), 1)));  // (1,M)
    const Tensor cos_all = div(matmul(x, transpose(c)), mul(x_norm, c_norm_row));
    Tensor mask({n, m}, 1.0);
    for (std::size_t i = 0; i < n; ++i) mask.at({i, labels[i]}) = 0.0;
    const Tensor others = scale(sum_over_axis(mul(cos_all, mask), 1), 1.0 / static_cast<double>(m - 1));
    const Tensor a_out = scale(mean(add_scalar(scale(others, -1.0), 1.0)), -1.0);
    total = add(total, scale(a_out, lambda1));
  }
  if (cfg.use_l) {
    const Tensor beta = div(x_norm, add_scalar(c_own_norm, epsilon));
    total = add(total, scale(mean(square(add_scalar(scale(beta, -1.0), 1.0))), lambda2));
  }
  return total;
}

EmbeddingStats embedding_stats(const Tensor& x, Labels labels, const Tensor& c, double epsilon) {
  const ClassCenters centers = ClassCenters::from_tensor(c, epsilon);
  const Geometry g = measure(x, labels, centers, true);
  EmbeddingStats s;
  for (std::size_t i = 0; i < g.n; ++i) {
    s.intra_cos += g.cosines[i * g.m + labels[i]];
    if (g.m > 1) {
      double others = 0.0;
      for (std::size_t k = 0; k < g.m; ++k) {
        if (k != labels[i]) others += g.cosines[i * g.m + k];
      }
      s.inter_cos += others / static_cast<double>(g.m - 1);
    }
    s.beta += g.x_norm[i] / (g.c_norm[labels[i]] + epsilon);
  }
  const double n = static_cast<double>(g.n);
  s.intra_cos /= n;
  s.inter_cos /= n;
  s.beta /= n;
  return s;
}

}  // namespace mdr::loss
