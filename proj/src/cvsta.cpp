#include "mdr/cvsta.hpp"

#include <algorithm>
#include <cmath>

#include "mdr/error.hpp"

namespace mdr::nn {

std::size_t CMidRule::resolve(std::size_t in_channels, std::size_t out_channels) const {
  if (fixed) return out_channels;
  if (divisor == 0) throw ConfigError("C_mid divisor must be positive");
  return std::max<std::size_t>(1, in_channels / divisor);
}

CMidRule CMidRule::parse(const std::string& text) {
  if (text == "fixed" || text == "f") return CMidRule{0, true};
  try {
    std::size_t pos = 0;
    const long v = std::stol(text, &pos);
    if (pos == text.size() && v > 0) return CMidRule{static_cast<std::size_t>(v), false};
  } catch (const std::exception&) {
  }
  throw ConfigError("c_mid must be a positive divisor or 'fixed', got '" + text + "'");
}

std::string CMidRule::str() const { return fixed ? "fixed" : std::to_string(divisor); }

namespace {

Tensor conv_weight(std::size_t out, std::size_t in, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  return Tensor::uniform({out, in}, -bound, bound, rng).set_requires_grad(true);
}

void check_input(const Tensor& x, const CvstaParams& p) {
  if (x.rank() != 3 || x.dim(0) != p.in_channels()) {
    throw ShapeError("cvsta: input " + shape_str(x.shape()) + " does not match " +
                     std::to_string(p.in_channels()) + " input channels");
  }
}

}  // namespace

CvstaParams CvstaParams::init(std::size_t in_channels, std::size_t mid_channels,
                              std::size_t out_channels, Activation sigma, std::mt19937_64& rng) {
  CvstaParams p;
  p.w_mid = conv_weight(mid_channels, in_channels, rng);
  p.w_s_mid = conv_weight(mid_channels, in_channels, rng);
  p.w_tv = conv_weight(out_channels, mid_channels, rng);
  p.w_s = conv_weight(out_channels, mid_channels, rng);
  p.w_trans = conv_weight(out_channels, in_channels, rng);
  p.sigma = sigma;
  return p;
}

void CvstaParams::named(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + "w_mid", w_mid);
  out.emplace_back(prefix + "w_s_mid", w_s_mid);
  out.emplace_back(prefix + "w_tv", w_tv);
  out.emplace_back(prefix + "w_s", w_s);
  out.emplace_back(prefix + "w_trans", w_trans);
}

CvstaTrace cvsta_trace(const Tensor& x, const CvstaParams& p) {
  check_input(x, p);
  CvstaTrace tr;
  tr.f_mid = conv1x1(x, p.w_mid);
  tr.f_t = mean_over_axis(tr.f_mid, 2);
  tr.f_v = mean_over_axis(tr.f_mid, 1);
  tr.f_r = conv1x1(activation(mul(tr.f_t, tr.f_v), p.sigma), p.w_tv);
  tr.f_tv = conv1x1(x, p.w_trans);
  tr.refined = mul(tr.f_r, tr.f_tv);
  const std::size_t joints = x.dim(2);
  tr.f_s = reshape(mean_over_axis(conv1x1(x, p.w_s_mid), 1), {p.mid_channels(), joints, 1});
  tr.topology = conv1x1(activation(add(tr.f_v, tr.f_s), p.sigma), p.w_s);
  return tr;
}

Tensor cvsta_saliency(const Tensor& x, const CvstaParams& p) {
  check_input(x, p);
  const Tensor f_mid = conv1x1(x, p.w_mid);
  return conv1x1(activation(mul(mean_over_axis(f_mid, 2), mean_over_axis(f_mid, 1)), p.sigma),
                 p.w_tv);
}

Tensor cvsta_refine(const Tensor& x, const CvstaParams& p) {
  return mul(cvsta_saliency(x, p), conv1x1(x, p.w_trans));
}

Tensor spatial_topology(const Tensor& x, const CvstaParams& p) {
  check_input(x, p);
  const Tensor f_v = mean_over_axis(conv1x1(x, p.w_mid), 1);
  const Tensor f_s =
      reshape(mean_over_axis(conv1x1(x, p.w_s_mid), 1), {p.mid_channels(), x.dim(2), 1});
  return conv1x1(activation(add(f_v, f_s), p.sigma), p.w_s);
}

GcbParams GcbParams::init(const graph::SkeletonGraph& g, std::size_t in_channels,
                          std::size_t out_channels, CMidRule c_mid, Activation sigma,
                          std::mt19937_64& rng) {
  GcbParams p;
  const std::size_t mid = c_mid.resolve(in_channels, out_channels);
  const std::size_t v = g.num_joints();
  for (std::size_t k = 0; k < g.num_subsets(); ++k) {
    p.subsets.push_back(CvstaParams::init(in_channels, mid, out_channels, sigma, rng));
    p.alpha.push_back(Tensor({1, 1, 1}, 0.0).set_requires_grad(true));
    p.adjacency.push_back(g.subset(k).reshaped_copy({1, v, v}));
  }
  return p;
}

void GcbParams::named(const std::string& prefix, NamedTensors& out) const {
  for (std::size_t k = 0; k < subsets.size(); ++k) {
    subsets[k].named(prefix + "subset" + std::to_string(k) + ".", out);
    out.emplace_back(prefix + "alpha" + std::to_string(k), alpha[k]);
  }
}

Tensor gcb_forward(const Tensor& x, const GcbParams& p) {
  if (p.subsets.empty() || p.alpha.size() != p.subsets.size() ||
      p.adjacency.size() != p.subsets.size()) {
    throw ShapeError("gcb: parameter lists must have one entry per adjacency subset");
  }
  if (x.rank() != 3 || x.dim(2) != p.num_joints()) {
    throw ShapeError("gcb: input " + shape_str(x.shape()) + " does not match a graph with " +
                     std::to_string(p.num_joints()) + " joints");
  }
  Tensor out;
  for (std::size_t k = 0; k < p.subsets.size(); ++k) {
    const CvstaTrace tr = cvsta_trace(x, p.subsets[k]);
    const Tensor mixing = add(p.adjacency[k], mul(p.alpha[k], tr.topology));
    Tensor term = matmul(tr.refined, mixing);
    out = out.defined() ? add(out, term) : term;
  }
  return out;
}

}  // namespace mdr::nn
