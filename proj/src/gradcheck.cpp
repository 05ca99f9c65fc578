#include "mdr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <random>

#include "mdr/error.hpp"
#include "mdr/network.hpp"
#include "mdr/ops.hpp"
#include "mdr/rdl.hpp"

namespace mdr::check {

double relative_error(double analytic, double numeric) {
  const double den = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / den;
}

double central_difference(const ScalarFn& f, const Tensor& x, std::size_t coord, double h,
                          double* used_h) {
  if (coord >= x.numel()) throw ShapeError("central_difference: coordinate out of range");
  if (!(h > 0.0)) throw ConfigError("central_difference: step must be positive");
  Tensor probe = x.detach();
  auto v = probe.data_mut();
  const double x0 = v[coord];
  const double floor = h * 1e-4;
  PieceRecorder pieces;
  for (;;) {
    pieces.reset();
    v[coord] = x0 + h;
    const double fp = f(probe);
    const auto sig_p = pieces.signature();
    pieces.reset();
    v[coord] = x0 - h;
    const double fm = f(probe);
    const auto sig_m = pieces.signature();
    v[coord] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("central_difference: non-finite evaluation at coordinate " + std::to_string(coord));
    }
    if (sig_p == sig_m || h * 0.1 < floor) {
      if (used_h != nullptr) *used_h = h;
      return (fp - fm) / (2.0 * h);
    }
    h *= 0.1;
  }
}

std::vector<GradCheckReport> check_gradient(const std::string& op, const ScalarFn& f, const Tensor& x,
                                            std::span<const double> analytic,
                                            std::span<const std::size_t> coords, double h, double tol) {
  if (analytic.size() != x.numel()) {
    throw ShapeError("check_gradient: analytic gradient has " + std::to_string(analytic.size()) +
                     " entries for a tensor of " + std::to_string(x.numel()));
  }
  std::vector<GradCheckReport> out;
  out.reserve(coords.size());
  for (auto coord : coords) {
    GradCheckReport r;
    r.op = op;
    r.coord = coord;
    r.h = h;
    r.analytic = analytic[coord];
    try {
      r.numeric = central_difference(f, x, coord, h, &r.h);
      r.rel_err = relative_error(r.analytic, r.numeric);
      r.pass = r.rel_err < tol;
    } catch (const NumericError&) {
      r.numeric = std::numeric_limits<double>::quiet_NaN();
      r.rel_err = std::numeric_limits<double>::infinity();
      r.pass = false;
    }
    out.push_back(r);
  }
  return out;
}

Target parse_target(const std::string& name) {
  if (name == "tensor-op") return Target::tensor_op;
  if (name == "rdl") return Target::rdl;
  if (name == "cvsta") return Target::cvsta;
  if (name == "layer") return Target::layer;
  if (name == "full-model") return Target::full_model;
  throw ConfigError("unknown gradcheck target '" + name +
                    "' (expected tensor-op, rdl, cvsta, layer or full-model)");
}

std::string to_string(Target t) {
  switch (t) {
    case Target::tensor_op: return "tensor-op";
    case Target::rdl: return "rdl";
    case Target::cvsta: return "cvsta";
    case Target::layer: return "layer";
    case Target::full_model: return "full-model";
  }
  return "?";
}

double default_tolerance(Target t) {
  return t == Target::tensor_op || t == Target::rdl ? 1e-6 : 1e-4;
}

bool all_pass(const std::vector<GradCheckReport>& reports) {
  return std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.pass; });
}

double max_rel_err(const std::vector<GradCheckReport>& reports) {
  double worst = 0.0;
  for (const auto& r : reports) worst = std::max(worst, r.rel_err);
  return worst;
}

void write_reports_csv(std::ostream& os, const std::vector<GradCheckReport>& reports) {
  os << "op,coord,analytic,numeric,rel_err,pass,h\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, ",%zu,%.17g,%.17g,%.6e,%d,%.3g\n", r.coord, r.analytic, r.numeric,
                  r.rel_err, r.pass ? 1 : 0, r.h);
    os << r.op << buf;
  }
}

void write_reports_table(std::ostream& os, const std::vector<GradCheckReport>& reports) {
  struct Row {
    std::size_t coords = 0, failures = 0;
    double worst = 0.0;
  };
  std::vector<std::string> order;
  std::map<std::string, Row> rows;
  for (const auto& r : reports) {
    if (!rows.count(r.op)) order.push_back(r.op);
    auto& row = rows[r.op];
    ++row.coords;
    if (!r.pass) ++row.failures;
    row.worst = std::max(row.worst, r.rel_err);
  }
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-40s %8s %8s %12s\n", "op", "coords", "failed", "max_rel_err");
  os << buf;
  for (const auto& name : order) {
    const auto& row = rows[name];
    std::snprintf(buf, sizeof buf, "%-40s %8zu %8zu %12.3e\n", name.c_str(), row.coords, row.failures,
                  row.worst);
    os << buf;
  }
}

namespace {

using Inputs = std::vector<Tensor>;
using TapeFn = std::function<Tensor(const Inputs&)>;

Tensor draw(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(std::move(shape), lo, hi, rng);
}

std::vector<std::size_t> all_coords(const Tensor& t) {
  std::vector<std::size_t> c(t.numel());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = i;
  return c;
}

// Tape gradient of F w.r.t. every input, each compared against differences of F.
void check_tape(const std::string& op, const TapeFn& fn, const Inputs& inputs, double h, double tol,
                std::vector<GradCheckReport>& out) {
  Inputs leaves;
  for (const auto& t : inputs) leaves.push_back(t.detach().set_requires_grad(true));
  fn(leaves).backward();
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const Tensor grad = leaves[i].grad_tensor();
    ScalarFn f = [&, i](const Tensor& probe) {
      NoGradGuard guard;
      Inputs args = inputs;
      args[i] = probe;
      return fn(args).item();
    };
    const auto coords = all_coords(inputs[i]);
    const std::string name = inputs.size() == 1 ? op : op + "/in" + std::to_string(i);
    auto reps = check_gradient(name, f, inputs[i], grad.data(), coords, h, tol);
    out.insert(out.end(), reps.begin(), reps.end());
  }
}

// Weighted sum turns any tensor-valued op into a scalar with a generic upstream gradient.
Tensor weighted(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

void tensor_op_trial(std::mt19937_64& rng, double h, double tol, std::vector<GradCheckReport>& out) {
  struct Case {
    const char* name;
    Inputs inputs;
    std::function<Tensor(const Inputs&)> op;
  };
  const std::vector<std::size_t> rows{2, 0, 2, 1};
  std::vector<Case> cases;
  cases.push_back({"add", {draw({3, 4}, rng), draw({1, 4}, rng)}, [](const Inputs& a) { return add(a[0], a[1]); }});
  cases.push_back({"sub", {draw({2, 3, 1}, rng), draw({3, 4}, rng)}, [](const Inputs& a) { return sub(a[0], a[1]); }});
  cases.push_back({"mul", {draw({2, 3, 1}, rng), draw({2, 1, 4}, rng)}, [](const Inputs& a) { return mul(a[0], a[1]); }});
  cases.push_back({"div", {draw({3, 4}, rng), draw({3, 1}, rng, 0.5, 1.5)}, [](const Inputs& a) { return div(a[0], a[1]); }});
  cases.push_back({"scale", {draw({5}, rng)}, [](const Inputs& a) { return scale(a[0], -1.7); }});
  cases.push_back({"add_scalar", {draw({5}, rng)}, [](const Inputs& a) { return square(add_scalar(a[0], 0.3)); }});
  cases.push_back({"square", {draw({2, 3}, rng)}, [](const Inputs& a) { return square(a[0]); }});
  cases.push_back({"sqrt", {draw({2, 3}, rng, 0.5, 1.5)}, [](const Inputs& a) { return sqrt(a[0]); }});
  for (auto kind : {Activation::tanh, Activation::sigmoid, Activation::hardswish, Activation::relu}) {
    const double lo = kind == Activation::hardswish ? -4.0 : -1.0;
    cases.push_back({kind == Activation::tanh        ? "tanh"
                     : kind == Activation::sigmoid   ? "sigmoid"
                     : kind == Activation::hardswish ? "hardswish"
                                                     : "relu",
                     {draw({4, 5}, rng, lo, -lo)},
                     [kind](const Inputs& a) { return activation(a[0], kind); }});
  }
  cases.push_back({"matmul2", {draw({3, 4}, rng), draw({4, 2}, rng)}, [](const Inputs& a) { return matmul(a[0], a[1]); }});
  cases.push_back({"matmul3", {draw({2, 3, 4}, rng), draw({2, 4, 3}, rng)}, [](const Inputs& a) { return matmul(a[0], a[1]); }});
  cases.push_back({"matmul3_shared", {draw({2, 3, 4}, rng), draw({1, 4, 4}, rng)},
                   [](const Inputs& a) { return matmul(a[0], a[1]); }});
  cases.push_back({"matmul3x2", {draw({2, 3, 4}, rng), draw({4, 2}, rng)}, [](const Inputs& a) { return matmul(a[0], a[1]); }});
  cases.push_back({"transpose", {draw({3, 2}, rng)}, [](const Inputs& a) { return transpose(a[0]); }});
  cases.push_back({"conv1x1", {draw({3, 4, 2}, rng), draw({2, 3}, rng), draw({2}, rng)},
                   [](const Inputs& a) { return conv1x1(a[0], a[1], a[2]); }});
  cases.push_back({"temporal_conv", {draw({2, 6, 3}, rng), draw({3, 2, 3}, rng)},
                   [](const Inputs& a) { return temporal_conv(a[0], a[1], 1); }});
  cases.push_back({"temporal_conv_s2", {draw({2, 6, 3}, rng), draw({2, 2, 5}, rng)},
                   [](const Inputs& a) { return temporal_conv(a[0], a[1], 2); }});
  cases.push_back({"mean_over_axis", {draw({2, 3, 4}, rng)}, [](const Inputs& a) { return mean_over_axis(a[0], 1); }});
  cases.push_back({"sum_over_axis", {draw({2, 3, 4}, rng)}, [](const Inputs& a) { return sum_over_axis(a[0], 2); }});
  cases.push_back({"mean", {draw({2, 3}, rng)}, [](const Inputs& a) { return square(mean(a[0])); }});
  cases.push_back({"sum", {draw({2, 3}, rng)}, [](const Inputs& a) { return square(sum(a[0])); }});
  cases.push_back({"reshape", {draw({2, 6}, rng)}, [](const Inputs& a) { return reshape(a[0], {3, 4}); }});
  cases.push_back({"concat", {draw({2, 3}, rng), draw({1, 3}, rng)}, [](const Inputs& a) { return concat(a, 0); }});
  cases.push_back({"gather_rows", {draw({3, 2}, rng)}, [rows](const Inputs& a) { return gather_rows(a[0], rows); }});
  for (auto& c : cases) {
    const Tensor probe_out = [&] {
      NoGradGuard guard;
      return c.op(c.inputs);
    }();
    const Tensor w = draw(probe_out.shape(), rng);
    auto op = c.op;
    check_tape(c.name, [op, w](const Inputs& a) { return weighted(op(a), w); }, c.inputs, h, tol, out);
  }
  const std::vector<std::size_t> labels{1, 0, 2};
  check_tape("softmax_ce", [labels](const Inputs& a) { return loss::softmax_ce(a[0], labels); },
             {draw({3, 3}, rng, -2.0, 2.0)}, h, tol, out);
}

// ---- RDL: closed form vs extended-precision differences and vs the tape route ----

__extension__ typedef __float128 quad;

quad qsqrt(quad a) {
  if (a <= 0) return 0;
  quad s = std::sqrt(static_cast<double>(a));
  for (int i = 0; i < 3; ++i) s = (s + a / s) / 2;
  return s;
}

// Loss value from raw dot products and squared norms, evaluated in binary128.
struct RdlOracle {
  std::size_t n, m, d;
  std::vector<std::size_t> labels;
  double epsilon;
  loss::RdlConfig cfg;
  std::vector<quad> x, c;  // row-major copies

  quad value(const std::vector<quad>& xs, const std::vector<quad>& cs) const {
    std::vector<quad> cn(m);
    for (std::size_t j = 0; j < m; ++j) {
      quad s = 0;
      for (std::size_t k = 0; k < d; ++k) s += cs[j * d + k] * cs[j * d + k];
      cn[j] = qsqrt(s);
    }
    quad a_in = 0, a_out = 0, l = 0;
    for (std::size_t i = 0; i < n; ++i) {
      quad xn2 = 0;
      for (std::size_t k = 0; k < d; ++k) xn2 += xs[i * d + k] * xs[i * d + k];
      const quad xn = qsqrt(xn2);
      quad others = 0, own = 0;
      for (std::size_t j = 0; j < m; ++j) {
        quad dot = 0;
        for (std::size_t k = 0; k < d; ++k) dot += xs[i * d + k] * cs[j * d + k];
        const quad cos = dot / (xn * cn[j]);
        if (j == labels[i]) {
          own = cos;
        } else {
          others += cos;
        }
      }
      a_in += (1 - own) * (1 - own);
      a_out += 1 - others / static_cast<quad>(m - 1);
      const quad beta = xn / (cn[labels[i]] + epsilon);
      l += (1 - beta) * (1 - beta);
    }
    const quad inv_n = quad(1) / n;
    quad total = 0;
    if (cfg.use_a_in) total += a_in * inv_n;
    if (cfg.use_a_out) total += cfg.weight1(n) * (-a_out * inv_n);
    if (cfg.use_l) total += cfg.weight2(n) * (l * inv_n);
    return total;
  }

  double diff_x(std::size_t coord, quad h) const {
    auto xs = x;
    xs[coord] = x[coord] + h;
    const quad fp = value(xs, c);
    xs[coord] = x[coord] - h;
    const quad fm = value(xs, c);
    return static_cast<double>((fp - fm) / (2 * h));
  }
  double diff_c(std::size_t coord, quad h) const {
    auto cs = c;
    cs[coord] = c[coord] + h;
    const quad fp = value(x, cs);
    cs[coord] = c[coord] - h;
    const quad fm = value(x, cs);
    return static_cast<double>((fp - fm) / (2 * h));
  }
};

// Rows with norm below 0.1 are redrawn to stay clear of the cosine singularity.
Tensor draw_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t k = 0; k < cols; ++k) {
        v[r * cols + k] = u(rng);
        norm += v[r * cols + k] * v[r * cols + k];
      }
    } while (std::sqrt(norm) < 0.1);
  }
  return Tensor({rows, cols}, std::move(v));
}

constexpr double kExtendedStep = 1e-9;

void rdl_trial(std::mt19937_64& rng, double tol, std::vector<GradCheckReport>& out) {
  std::uniform_int_distribution<std::size_t> pick_n(1, 16), pick_d(2, 32), pick_m(2, 8);
  const std::size_t n = pick_n(rng), d = pick_d(rng), m = pick_m(rng);
  std::uniform_int_distribution<std::size_t> pick_label(0, m - 1);
  std::vector<std::size_t> labels(n);
  for (auto& y : labels) y = pick_label(rng);
  const Tensor x = draw_rows(n, d, rng);
  const Tensor c = draw_rows(m, d, rng);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double epsilon = u01(rng) < 0.3 ? 0.1 * u01(rng) : 0.0;
  loss::RdlConfig cfg;
  const auto centers = loss::ClassCenters::from_tensor(c, epsilon);

  const Tensor gx = loss::rdl_grad_x(x, labels, centers, cfg);
  const Tensor gc = loss::rdl_grad_c(x, labels, centers, cfg);

  RdlOracle oracle{n, m, d, labels, epsilon, cfg, {}, {}};
  for (double v : x.data()) oracle.x.push_back(v);
  for (double v : c.data()) oracle.c.push_back(v);
  auto compare = [&](const std::string& op, std::size_t coord, double analytic, double numeric, double h) {
    GradCheckReport r{op, coord, analytic, numeric, relative_error(analytic, numeric), false, h};
    r.pass = r.rel_err < tol;
    out.push_back(r);
  };
  for (std::size_t i = 0; i < n * d; ++i) compare("rdl/x", i, gx.data()[i], oracle.diff_x(i, kExtendedStep), kExtendedStep);
  for (std::size_t i = 0; i < m * d; ++i) compare("rdl/c", i, gc.data()[i], oracle.diff_c(i, kExtendedStep), kExtendedStep);

  Tensor xl = x.detach().set_requires_grad(true);
  Tensor cl = c.detach().set_requires_grad(true);
  loss::rdl_composite(xl, cl, labels, epsilon, cfg).backward();
  for (std::size_t i = 0; i < n * d; ++i) compare("rdl/x-tape", i, gx.data()[i], xl.grad()[i], 0.0);
  for (std::size_t i = 0; i < m * d; ++i) compare("rdl/c-tape", i, gc.data()[i], cl.grad()[i], 0.0);
}

// ---- composite blocks ----

graph::SkeletonGraph small_graph(std::size_t trial) {
  // Alternates between a five-joint chain and a four-joint star.
  if (trial % 2 == 0) return graph::build_graph(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}}, 2);
  return graph::build_graph(4, {{0, 1}, {0, 2}, {0, 3}}, 0);
}

Activation trial_sigma(std::size_t trial) {
  constexpr Activation kinds[] = {Activation::tanh, Activation::sigmoid, Activation::hardswish};
  return kinds[trial % 3];
}

void check_named(const std::string& prefix, const nn::NamedTensors& named, const std::function<Tensor()>& loss_fn,
                 double h, double tol, std::vector<GradCheckReport>& out,
                 const std::function<std::vector<std::size_t>(const Tensor&)>& coords_for) {
  for (const auto& [name, t] : named) {
    Tensor param = t;
    param.zero_grad();
  }
  loss_fn().backward();
  for (const auto& [name, t] : named) {
    Tensor param = t;
    const Tensor grad = param.grad_tensor();
    const std::vector<double> original(param.data().begin(), param.data().end());
    ScalarFn f = [&](const Tensor& probe) {
      NoGradGuard guard;
      auto dst = param.data_mut();
      std::copy(probe.data().begin(), probe.data().end(), dst.begin());
      const double v = loss_fn().item();
      std::copy(original.begin(), original.end(), dst.begin());
      return v;
    };
    const auto coords = coords_for(param);
    auto reps = check_gradient(prefix + name, f, param, grad.data(), coords, h, tol);
    out.insert(out.end(), reps.begin(), reps.end());
  }
}

void cvsta_trial(std::size_t trial, std::mt19937_64& rng, double h, double tol,
                 std::vector<GradCheckReport>& out) {
  const auto g = small_graph(trial);
  const std::size_t v = g.num_joints(), cin = 3, cout = 4, t = 5;
  auto params = nn::GcbParams::init(g, cin, cout, nn::CMidRule{2, false}, trial_sigma(trial), rng);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& a : params.alpha) a.data_mut()[0] = u(rng);
  Tensor x = draw({cin, t, v}, rng).set_requires_grad(true);
  const Tensor w = draw({cout, t, v}, rng);
  nn::NamedTensors named;
  named.emplace_back("x", x);
  params.named("", named);
  check_named("cvsta/", named, [&] { return weighted(nn::gcb_forward(x, params), w); }, h, tol, out, all_coords);
}

void layer_trial(std::size_t trial, std::mt19937_64& rng, double h, double tol,
                 std::vector<GradCheckReport>& out) {
  nn::ModelConfig cfg;
  cfg.channels = {4};
  cfg.strides = {trial % 2 == 0 ? std::size_t{2} : std::size_t{1}};
  cfg.in_channels = trial % 2 == 0 ? 2 : 4;
  cfg.c_mid = nn::CMidRule{2, false};
  cfg.sigma = trial_sigma(trial);
  cfg.frames = 6;
  cfg.joints = 5;
  cfg.embedding_dim = 3;
  cfg.num_classes = 2;
  auto model = nn::Model::init(cfg, small_graph(0), rng());
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto a : model.layers[0].gcb.alpha) a.data_mut()[0] = u(rng);
  Tensor x = draw({cfg.in_channels, cfg.frames, cfg.joints}, rng).set_requires_grad(true);
  nn::calibrate(model, {x, draw(x.shape(), rng), draw(x.shape(), rng)});
  const Tensor probe = [&] {
    NoGradGuard guard;
    return nn::layer_forward(x, model.layers[0]);
  }();
  const Tensor w = draw(probe.shape(), rng);
  nn::NamedTensors named;
  named.emplace_back("x", x);
  for (auto& [name, p] : model.named_parameters())
    if (name.rfind("layer1.", 0) == 0) named.emplace_back(name, p);
  check_named("layer/", named, [&] { return weighted(nn::layer_forward(x, model.layers[0]), w); }, h, tol, out,
              all_coords);
}

void full_model_trial(std::mt19937_64& rng, std::size_t coords_wanted, double h, double tol,
                      std::vector<GradCheckReport>& out) {
  const auto cfg = nn::ModelConfig::tiny();
  auto model = nn::Model::init(cfg, graph::toy_skeleton(), rng());
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (const auto& layer : model.layers)
    for (auto a : layer.gcb.alpha) a.data_mut()[0] = 0.5 * u(rng);
  const std::vector<Tensor> batch{draw({cfg.in_channels, cfg.frames, cfg.joints}, rng),
                                  draw({cfg.in_channels, cfg.frames, cfg.joints}, rng)};
  nn::calibrate(model, batch);
  std::uniform_int_distribution<std::size_t> pick_label(0, cfg.num_classes - 1);
  const std::vector<std::size_t> labels{pick_label(rng), pick_label(rng)};
  auto centers = loss::ClassCenters::init(cfg.num_classes, cfg.embedding_dim, rng);
  const loss::RdlConfig rdl_cfg;
  auto loss_fn = [&] {
    const auto o = model.forward(batch);
    return loss::total_loss(o.logits, o.embeddings, labels, centers, rdl_cfg, loss::Reduction::sum, true);
  };
  const auto named = model.named_parameters();
  // One coordinate in every parameter tensor, the rest spread by tensor size.
  std::size_t total = 0;
  for (const auto& [name, t] : named) total += t.numel();
  std::map<const detail::TensorImpl*, std::vector<std::size_t>> picks;
  for (const auto& [name, t] : named) {
    std::uniform_int_distribution<std::size_t> pick(0, t.numel() - 1);
    picks[t.impl()].push_back(pick(rng));
  }
  std::uniform_int_distribution<std::size_t> pick_any(0, total - 1);
  for (std::size_t extra = named.size(); extra < coords_wanted; ++extra) {
    std::size_t flat = pick_any(rng);
    for (const auto& [name, t] : named) {
      if (flat < t.numel()) {
        auto& list = picks[t.impl()];
        if (std::find(list.begin(), list.end(), flat) == list.end()) list.push_back(flat);
        break;
      }
      flat -= t.numel();
    }
  }
  check_named("full-model/", named, loss_fn, h, tol, out,
              [&](const Tensor& t) { return picks[t.impl()]; });
}

}  // namespace

std::vector<GradCheckReport> check_module(Target target, std::size_t trials, std::uint64_t seed,
                                          const CheckOptions& options) {
  if (trials == 0) throw ConfigError("gradcheck needs at least one trial");
  const double tol = options.tolerance > 0.0 ? options.tolerance : default_tolerance(target);
  std::mt19937_64 rng(seed);
  std::vector<GradCheckReport> out;
  std::size_t trial = 0;
  // Keep drawing past `trials` until the coordinate floor is met.
  while (trial < trials || out.size() < options.min_coords) {
    switch (target) {
      case Target::tensor_op: tensor_op_trial(rng, options.h, tol, out); break;
      case Target::rdl: rdl_trial(rng, tol, out); break;
      case Target::cvsta: cvsta_trial(trial, rng, options.h, tol, out); break;
      case Target::layer: layer_trial(trial, rng, options.h, tol, out); break;
      case Target::full_model: {
        const std::size_t per_trial = (options.min_coords + trials - 1) / trials;
        full_model_trial(rng, per_trial, options.h, tol, out);
        break;
      }
    }
    ++trial;
  }
  return out;
}

}  // namespace mdr::check
