#include "mdr/ops.hpp"

#include <algorithm>
#include <cmath>

#include "mdr/error.hpp"

namespace mdr {

using detail::grad_sink;
using detail::make_result;

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "hardswish") return Activation::hardswish;
  if (name == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string to_string(Activation kind) {
  switch (kind) {
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::hardswish: return "hardswish";
    case Activation::relu: return "relu";
  }
  return "?";
}

namespace {

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t d = s.size(); d-- > 1;) st[d - 1] = st[d] * s[d];
  return st;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r - a.size(), 1), pb(r - b.size(), 1);
  pa.insert(pa.end(), a.begin(), a.end());
  pb.insert(pb.end(), b.begin(), b.end());
  BroadcastPlan plan;
  plan.out.resize(r);
  auto sa = contiguous_strides(pa);
  auto sb = contiguous_strides(pb);
  for (std::size_t d = 0; d < r; ++d) {
    if (pa[d] == pb[d]) {
      plan.out[d] = pa[d];
    } else if (pa[d] == 1) {
      plan.out[d] = pb[d];
      sa[d] = 0;
    } else if (pb[d] == 1) {
      plan.out[d] = pa[d];
      sb[d] = 0;
    } else {
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " do not broadcast");
    }
  }
  plan.stride_a = std::move(sa);
  plan.stride_b = std::move(sb);
  return plan;
}

// Calls f(out_index, a_index, b_index) over the broadcast output in row-major order.
template <class F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  const auto& out = plan.out;
  const std::size_t r = out.size();
  const std::size_t n = shape_numel(out);
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  const std::size_t last = r - 1;
  const std::size_t inner = out[last];
  const std::size_t sa_last = plan.stride_a[last], sb_last = plan.stride_b[last];
  for (std::size_t lin = 0; lin < n; lin += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(lin + j, ia + j * sa_last, ib + j * sb_last);
    for (std::size_t d = last; d-- > 0;) {
      ++idx[d];
      ia += plan.stride_a[d];
      ib += plan.stride_b[d];
      if (idx[d] < out[d]) break;
      ia -= plan.stride_a[d] * out[d];
      ib -= plan.stride_b[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Binary op with derivative callbacks da(x, y), db(x, y).
template <class Fwd, class Da, class Db>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
  const auto& av = a.data();
  const auto& bv = b.data();
  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    return make_result(op, a.shape(), std::move(out), {a, b},
                       [a, b, da, db](std::span<const double> g, std::span<const double>) {
                         auto ga = grad_sink(a);
                         auto gb = grad_sink(b);
                         const auto& x = a.data();
                         const auto& y = b.data();
                         if (!ga.empty())
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(x[i], y[i]);
                         if (!gb.empty())
                           for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(x[i], y[i]);
                       });
  }
  auto plan = plan_broadcast(a.shape(), b.shape(), op);
  std::vector<double> out(shape_numel(plan.out));
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out[o] = fwd(av[ia], bv[ib]);
  });
  Shape out_shape = plan.out;
  return make_result(op, std::move(out_shape), std::move(out), {a, b},
                     [a, b, da, db, plan](std::span<const double> g, std::span<const double>) {
                       auto ga = grad_sink(a);
                       auto gb = grad_sink(b);
                       const auto& x = a.data();
                       const auto& y = b.data();
                       for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                         if (!ga.empty()) ga[ia] += g[o] * da(x[ia], y[ib]);
                         if (!gb.empty()) gb[ib] += g[o] * db(x[ia], y[ib]);
                       });
                     });
}

// Unary op whose derivative is expressed through input x and output y.
template <class Fwd, class Dx>
Tensor unary_op(const char* op, const Tensor& x, Fwd fwd, Dx dx) {
  const auto& xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(op, x.shape(), std::move(out), {x},
                     [x, dx](std::span<const double> g, std::span<const double> y) {
                       auto gx = grad_sink(x);
                       if (gx.empty()) return;
                       const auto& xv = x.data();
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dx(xv[i], y[i]);
                     });
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got shape " + shape_str(t.shape()));
  }
}

// C[n,m] += A[n,k] * B[k,m]
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const double* A, const double* B,
             double* C) {
  for (std::size_t i = 0; i < n; ++i) {
    double* c = C + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      if (a == 0.0) continue;
      const double* b = B + p * m;
      for (std::size_t j = 0; j < m; ++j) c[j] += a * b[j];
    }
  }
}

// C[n,k] += G[n,m] * B[k,m]^T
void gemm_nt(std::size_t n, std::size_t k, std::size_t m, const double* G, const double* B,
             double* C) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* g = G + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double* b = B + p * m;
      double s = 0.0;
#pragma omp simd reduction(+ : s)
      for (std::size_t j = 0; j < m; ++j) s += g[j] * b[j];
      C[i * k + p] += s;
    }
  }
}

// C[k,m] += A[n,k]^T * G[n,m]
void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const double* A, const double* G,
             double* C) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* g = G + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      if (a == 0.0) continue;
      double* c = C + p * m;
      for (std::size_t j = 0; j < m; ++j) c[j] += a * g[j];
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary_op(
      "scale", x, [factor](double v) { return factor * v; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary_op(
      "add_scalar", x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& x) {
  return unary_op(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.data()) {
    if (v < 0.0) throw DegenerateInputError("sqrt of negative value");
  }
  return unary_op(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

namespace {
thread_local PieceRecorder* active_recorder = nullptr;
}  // namespace

PieceRecorder::PieceRecorder() : previous_(active_recorder) { active_recorder = this; }
PieceRecorder::~PieceRecorder() { active_recorder = previous_; }

void PieceRecorder::record(std::span<const double> values, Activation kind) {
  for (double v : values) {
    std::uint64_t piece = 0;
    if (kind == Activation::relu) piece = v > 0.0 ? 1 : 0;
    if (kind == Activation::hardswish) piece = v <= -3.0 ? 0 : (v >= 3.0 ? 2 : 1);
    hash_ = (hash_ ^ piece) * 1099511628211ull;
  }
}

Tensor activation(const Tensor& x, Activation kind) {
  if (active_recorder != nullptr && (kind == Activation::relu || kind == Activation::hardswish))
    active_recorder->record(x.data(), kind);
  switch (kind) {
    case Activation::tanh:
      return unary_op(
          "tanh", x, [](double v) { return std::tanh(v); },
          [](double, double y) { return 1.0 - y * y; });
    case Activation::sigmoid:
      return unary_op(
          "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
          [](double, double y) { return y * (1.0 - y); });
    case Activation::relu:
      return unary_op(
          "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
          [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
    case Activation::hardswish:
      return unary_op(
          "hardswish", x,
          [](double v) {
            if (v <= -3.0) return 0.0;
            if (v >= 3.0) return v;
            return v * (v + 3.0) / 6.0;
          },
          [](double v, double) {
            if (v <= -3.0) return 0.0;
            if (v >= 3.0) return 1.0;
            return (2.0 * v + 3.0) / 6.0;
          });
  }
  throw ConfigError("unknown activation");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool a3 = a.rank() == 3, b3 = b.rank() == 3;
  if ((a.rank() != 2 && !a3) || (b.rank() != 2 && !b3) || (!a3 && b3)) {
    throw ShapeError("matmul: unsupported ranks " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t batch_a = a3 ? a.dim(0) : 1;
  const std::size_t batch_b = b3 ? b.dim(0) : 1;
  const std::size_t n = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), m = b.dim(b.rank() - 1);
  if (k != kb || (batch_a != batch_b && batch_a != 1 && batch_b != 1)) {
    throw ShapeError("matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " are incompatible");
  }
  const std::size_t batch = std::max(batch_a, batch_b);
  const std::size_t step_a = batch_a == 1 ? 0 : n * k;
  const std::size_t step_b = batch_b == 1 ? 0 : k * m;
  std::vector<double> out(batch * n * m, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t s = 0; s < batch; ++s) gemm_nn(n, k, m, A + s * step_a, B + s * step_b, out.data() + s * n * m);
  Shape shape = (a3 || b3) ? Shape{batch, n, m} : Shape{n, m};
  return make_result("matmul", std::move(shape), std::move(out), {a, b},
                     [=](std::span<const double> g, std::span<const double>) {
                       auto ga = grad_sink(a);
                       auto gb = grad_sink(b);
                       const double* A = a.data().data();
                       const double* B = b.data().data();
                       for (std::size_t s = 0; s < batch; ++s) {
                         const double* G = g.data() + s * n * m;
                         if (!ga.empty()) gemm_nt(n, k, m, G, B + s * step_b, ga.data() + s * step_a);
                         if (!gb.empty()) gemm_tn(n, k, m, A + s * step_a, G, gb.data() + s * step_b);
                       }
                     });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose", "input");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  const auto& xv = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return make_result("transpose", Shape{c, r}, std::move(out), {x},
                     [x, r, c](std::span<const double> g, std::span<const double>) {
                       auto gx = grad_sink(x);
                       if (gx.empty()) return;
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
                     });
}

Tensor conv1x1(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias) {
  require_rank(x, 3, "conv1x1", "input");
  require_rank(w, 2, "conv1x1", "weight");
  const std::size_t cin = x.dim(0), cout = w.dim(0);
  if (w.dim(1) != cin) {
    throw ShapeError("conv1x1: weight " + shape_str(w.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) {
    throw ShapeError("conv1x1: bias " + shape_str(bias->shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  const std::size_t plane = x.dim(1) * x.dim(2);
  std::vector<double> out(cout * plane, 0.0);
  if (bias) {
    const auto& bv = bias->data();
    for (std::size_t co = 0; co < cout; ++co)
      std::fill_n(out.begin() + co * plane, plane, bv[co]);
  }
  gemm_nn(cout, cin, plane, w.data().data(), x.data().data(), out.data());
  std::vector<Tensor> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  Tensor b = bias ? *bias : Tensor();
  return make_result("conv1x1", Shape{cout, x.dim(1), x.dim(2)}, std::move(out), std::move(inputs),
                     [x, w, b, cin, cout, plane](std::span<const double> g, std::span<const double>) {
                       auto gx = grad_sink(x);
                       auto gw = grad_sink(w);
                       if (!gx.empty()) gemm_tn(cout, cin, plane, w.data().data(), g.data(), gx.data());
                       if (!gw.empty()) gemm_nt(cout, cin, plane, g.data(), x.data().data(), gw.data());
                       if (b.defined()) {
                         auto gb = grad_sink(b);
                         if (!gb.empty()) {
                           for (std::size_t co = 0; co < cout; ++co) {
                             double s = 0.0;
                             for (std::size_t p = 0; p < plane; ++p) s += g[co * plane + p];
                             gb[co] += s;
                           }
                         }
                       }
                     });
}

Tensor temporal_conv(const Tensor& x, const Tensor& w, std::size_t stride) {
  require_rank(x, 3, "temporal_conv", "input");
  require_rank(w, 3, "temporal_conv", "weight");
  const std::size_t cin = x.dim(0), frames = x.dim(1), joints = x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin) {
    throw ShapeError("temporal_conv: weight " + shape_str(w.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  if (k % 2 == 0) throw ShapeError("temporal_conv: kernel size must be odd, got " + std::to_string(k));
  if (k >= 2 * frames) {
    throw ShapeError("temporal_conv: kernel size " + std::to_string(k) + " too large for " +
                     std::to_string(frames) + " frames");
  }
  if (stride == 0) throw ShapeError("temporal_conv: stride must be positive");
  const std::size_t pad = (k - 1) / 2;
  const std::size_t out_frames = (frames - 1) / stride + 1;
  const std::size_t out_plane = out_frames * joints;

  // Each tap is a (C_out x C_in) matrix applied to the input shifted by that tap;
  // frames shifted outside the sequence are zero.
  auto tap_weight = [=](const Tensor& wt, std::size_t j) {
    std::vector<double> wj(cout * cin);
    const auto& wv = wt.data();
    for (std::size_t o = 0; o < cout * cin; ++o) wj[o] = wv[o * k + j];
    return wj;
  };
  auto shifted_input = [=](const Tensor& xt, std::size_t j) {
    std::vector<double> xj(cin * out_plane, 0.0);
    const auto& xv = xt.data();
    for (std::size_t to = 0; to < out_frames; ++to) {
      const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * stride + j) - static_cast<std::ptrdiff_t>(pad);
      if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(frames)) continue;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        std::copy_n(xv.begin() + (ci * frames + static_cast<std::size_t>(ti)) * joints, joints,
                    xj.begin() + ci * out_plane + to * joints);
      }
    }
    return xj;
  };

  std::vector<double> out(cout * out_plane, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const auto wj = tap_weight(w, j);
    const auto xj = shifted_input(x, j);
    gemm_nn(cout, cin, out_plane, wj.data(), xj.data(), out.data());
  }
  return make_result(
      "temporal_conv", Shape{cout, out_frames, joints}, std::move(out), {x, w},
      [=](std::span<const double> g, std::span<const double>) {
        auto gx = grad_sink(x);
        auto gw = grad_sink(w);
        std::vector<double> gj;
        for (std::size_t j = 0; j < k; ++j) {
          if (!gw.empty()) {
            const auto xj = shifted_input(x, j);
            gj.assign(cout * cin, 0.0);
            gemm_nt(cout, cin, out_plane, g.data(), xj.data(), gj.data());
            for (std::size_t o = 0; o < cout * cin; ++o) gw[o * k + j] += gj[o];
          }
          if (!gx.empty()) {
            const auto wj = tap_weight(w, j);
            gj.assign(cin * out_plane, 0.0);
            gemm_tn(cout, cin, out_plane, wj.data(), g.data(), gj.data());
            for (std::size_t to = 0; to < out_frames; ++to) {
              const std::ptrdiff_t ti =
                  static_cast<std::ptrdiff_t>(to * stride + j) - static_cast<std::ptrdiff_t>(pad);
              if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(frames)) continue;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                double* dst = gx.data() + (ci * frames + static_cast<std::size_t>(ti)) * joints;
                const double* src = gj.data() + ci * out_plane + to * joints;
                for (std::size_t v = 0; v < joints; ++v) dst[v] += src[v];
              }
            }
          }
        }
      });
}

namespace {

Tensor reduce_axis(const char* op, const Tensor& x, std::size_t axis, bool average) {
  if (axis >= x.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(x.shape()));
  }
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t n = s[axis];
  const double factor = average ? 1.0 / static_cast<double>(n) : 1.0;
  std::vector<double> out(outer * inner, 0.0);
  const auto& xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < inner; ++j) out[o * inner + j] += xv[(o * n + i) * inner + j];
  if (average)
    for (auto& v : out) v *= factor;
  Shape shape = s;
  shape[axis] = 1;
  return make_result(op, std::move(shape), std::move(out), {x},
                     [x, outer, inner, n, factor](std::span<const double> g, std::span<const double>) {
                       auto gx = grad_sink(x);
                       if (gx.empty()) return;
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < inner; ++j)
                             gx[(o * n + i) * inner + j] += factor * g[o * inner + j];
                     });
}

Tensor reduce_all(const char* op, const Tensor& x, bool average) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double factor = average ? 1.0 / static_cast<double>(x.numel()) : 1.0;
  return make_result(op, Shape{}, {s * factor}, {x},
                     [x, factor](std::span<const double> g, std::span<const double>) {
                       auto gx = grad_sink(x);
                       for (auto& v : gx) v += factor * g[0];
                     });
}

}  // namespace

Tensor mean_over_axis(const Tensor& x, std::size_t axis) {
  return reduce_axis("mean_over_axis", x, axis, true);
}

Tensor sum_over_axis(const Tensor& x, std::size_t axis) {
  return reduce_axis("sum_over_axis", x, axis, false);
}

Tensor sum(const Tensor& x) { return reduce_all("sum", x, false); }
Tensor mean(const Tensor& x) { return reduce_all("mean", x, true); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x},
                     [x](std::span<const double> g, std::span<const double>) {
                       auto gx = grad_sink(x);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw ShapeError("concat: shape " + shape_str(s) + " does not match " + shape_str(first));
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  Shape shape = first;
  shape[axis] = total;
  std::vector<double> out(shape_numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t n = p.dim(axis);
    const auto& pv = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + o * n * inner, n * inner, out.begin() + (o * total + offset) * inner);
    offset += n;
  }
  return make_result("concat", std::move(shape), std::move(out), parts,
                     [parts, offsets, outer, inner, total, axis](std::span<const double> g,
                                                                  std::span<const double>) {
                       for (std::size_t k = 0; k < parts.size(); ++k) {
                         auto gp = grad_sink(parts[k]);
                         if (gp.empty()) continue;
                         const std::size_t n = parts[k].dim(axis);
                         for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t i = 0; i < n * inner; ++i)
                             gp[o * n * inner + i] += g[(o * total + offsets[k]) * inner + i];
                       }
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows", "input");
  const std::size_t m = x.dim(0), d = x.dim(1);
  if (rows.empty()) throw ShapeError("gather_rows: empty index list");
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * d);
  const auto& xv = x.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m) {
      throw ShapeError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " +
                       shape_str(x.shape()));
    }
    std::copy_n(xv.begin() + idx[r] * d, d, out.begin() + r * d);
  }
  const std::size_t n = idx.size();
  return make_result("gather_rows", Shape{n, d}, std::move(out), {x},
                     [x, idx, d](std::span<const double> g, std::span<const double>) {
                       auto gx = grad_sink(x);
                       if (gx.empty()) return;
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t j = 0; j < d; ++j) gx[idx[r] * d + j] += g[r * d + j];
                     });
}

}  // namespace mdr
