#include "mdr/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mdr/error.hpp"
#include "mdr/serialize.hpp"

namespace mdr::nn {

namespace {

Tensor uniform_param(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), -bound, bound, rng).set_requires_grad(true);
}

Tensor constant_param(Shape shape, double value) {
  return Tensor(std::move(shape), value).set_requires_grad(true);
}

}  // namespace

std::size_t ModelConfig::frames_at_layer(std::size_t layer) const {
  std::size_t t = frames;
  for (std::size_t i = 0; i < layer && i < strides.size(); ++i) t = (t - 1) / strides[i] + 1;
  return t;
}

std::size_t ModelConfig::output_frames() const { return frames_at_layer(num_layers()); }

void ModelConfig::validate() const {
  if (channels.empty()) throw ConfigError("model needs at least one layer");
  if (strides.size() != channels.size()) {
    throw ConfigError("model.strides has " + std::to_string(strides.size()) + " entries for " +
                      std::to_string(channels.size()) + " layers");
  }
  if (m == 0) throw ConfigError("model.m must be at least 1");
  if (embedding_dim == 0 || num_classes == 0 || in_channels == 0 || frames == 0 || joints == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  std::size_t total_stride = 1;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] == 0 || channels[i] % m != 0) {
      throw ConfigError("layer " + std::to_string(i + 1) + " has " + std::to_string(channels[i]) +
                        " channels, not divisible by m=" + std::to_string(m));
    }
    if (strides[i] == 0) throw ConfigError("strides must be positive");
    total_stride *= strides[i];
    if (2 * m + 1 >= 2 * frames_at_layer(i)) {
      throw ConfigError("layer " + std::to_string(i + 1) + " sees too few frames for kernel " +
                        std::to_string(2 * m + 1));
    }
  }
  if (frames % total_stride != 0) {
    throw ConfigError("frame count " + std::to_string(frames) + " must be divisible by the total stride " +
                      std::to_string(total_stride));
  }
  if (!c_mid.fixed && c_mid.divisor == 0) throw ConfigError("model.c_mid divisor must be positive");
}

void ModelConfig::write_to(KeyValues& kv, const std::string& prefix) const {
  kv.set(prefix + "channels", join_sizes(channels));
  kv.set(prefix + "strides", join_sizes(strides));
  kv.set(prefix + "c_mid", c_mid.str());
  kv.set(prefix + "sigma", to_string(sigma));
  kv.set(prefix + "m", std::to_string(m));
  kv.set(prefix + "partition", partition == graph::PartitionStrategy::spatial ? "spatial" : "uniform");
  kv.set(prefix + "embedding_dim", std::to_string(embedding_dim));
  kv.set(prefix + "num_classes", std::to_string(num_classes));
  kv.set(prefix + "in_channels", std::to_string(in_channels));
  kv.set(prefix + "frames", std::to_string(frames));
  kv.set(prefix + "joints", std::to_string(joints));
}

ModelConfig ModelConfig::read_from(const KeyValues& kv, const std::string& prefix) {
  ModelConfig c;
  c.channels = kv.get_sizes(prefix + "channels", c.channels);
  c.strides = kv.get_sizes(prefix + "strides", c.strides);
  if (kv.has(prefix + "c_mid")) c.c_mid = CMidRule::parse(kv.get_string(prefix + "c_mid", ""));
  if (kv.has(prefix + "sigma")) c.sigma = parse_activation(kv.get_string(prefix + "sigma", ""));
  c.m = kv.get_size(prefix + "m", c.m);
  if (kv.has(prefix + "partition")) {
    c.partition = graph::parse_strategy(kv.get_string(prefix + "partition", ""));
  }
  c.embedding_dim = kv.get_size(prefix + "embedding_dim", c.embedding_dim);
  c.num_classes = kv.get_size(prefix + "num_classes", c.num_classes);
  c.in_channels = kv.get_size(prefix + "in_channels", c.in_channels);
  c.frames = kv.get_size(prefix + "frames", c.frames);
  c.joints = kv.get_size(prefix + "joints", c.joints);
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.channels = {8, 8, 16};
  c.strides = {1, 1, 1};
  c.embedding_dim = 16;
  c.num_classes = 3;
  c.frames = 16;
  c.joints = 9;
  return c;
}

TcbParams TcbParams::init(std::size_t channels, std::size_t m, std::size_t stride,
                          std::mt19937_64& rng) {
  if (m == 0 || channels % m != 0) {
    throw ShapeError("tcb: " + std::to_string(channels) + " channels not divisible by m=" +
                     std::to_string(m));
  }
  TcbParams p;
  p.stride = stride;
  for (std::size_t b = 0; b < m; ++b) {
    const std::size_t k = 2 * b + 3;
    p.branches.push_back(uniform_param({channels / m, channels, k}, channels * k, rng));
  }
  return p;
}

Tensor tcb_forward(const Tensor& x, const TcbParams& p) {
  if (p.branches.empty()) throw ShapeError("tcb: no branches");
  const std::size_t channels = x.rank() == 3 ? x.dim(0) : 0;
  if (channels % p.m() != 0) {
    throw ShapeError("tcb: input channels " + std::to_string(channels) + " not divisible by m=" +
                     std::to_string(p.m()));
  }
  std::vector<Tensor> outs;
  outs.reserve(p.m());
  for (const auto& w : p.branches) {
    if (w.dim(1) != channels || w.dim(0) * p.m() != channels) {
      throw ShapeError("tcb: branch weight " + shape_str(w.shape()) + " does not match input " +
                       shape_str(x.shape()));
    }
    outs.push_back(temporal_conv(x, w, p.stride));
  }
  return outs.size() == 1 ? outs.front() : concat(outs, 0);
}

Tensor layer_forward(const Tensor& x, const MdrLayer& layer) {
  const Tensor g = activation(add(mul(gcb_forward(x, layer.gcb), layer.gcb_scale), layer.gcb_shift),
                              Activation::relu);
  const Tensor t = add(mul(tcb_forward(g, layer.tcb), layer.tcb_scale), layer.tcb_shift);
  const Tensor res = layer.identity_residual() ? x : temporal_conv(x, layer.residual, layer.stride);
  return activation(add(t, res), Activation::relu);
}

Model Model::init(const ModelConfig& config, const graph::SkeletonGraph& graph, std::uint64_t seed) {
  config.validate();
  if (graph.num_joints() != config.joints) {
    throw ConfigError("graph has " + std::to_string(graph.num_joints()) + " joints, config expects " +
                      std::to_string(config.joints));
  }
  if (graph.num_subsets() != config.num_subsets()) {
    throw ConfigError("graph partition does not match model.partition");
  }
  std::mt19937_64 rng(seed);
  Model model;
  model.config = config;
  model.graph = graph;
  std::size_t in = config.in_channels;
  for (std::size_t i = 0; i < config.num_layers(); ++i) {
    const std::size_t out = config.channels[i];
    const std::size_t stride = config.strides[i];
    MdrLayer layer;
    layer.gcb = GcbParams::init(graph, in, out, config.c_mid, config.sigma, rng);
    layer.gcb_scale = constant_param({out, 1, 1}, 1.0);
    layer.gcb_shift = constant_param({out, 1, 1}, 0.0);
    layer.tcb = TcbParams::init(out, config.m, stride, rng);
    layer.tcb_scale = constant_param({out, 1, 1}, 1.0);
    layer.tcb_shift = constant_param({out, 1, 1}, 0.0);
    layer.stride = stride;
    if (in != out || stride != 1) layer.residual = uniform_param({out, in, 1}, in, rng);
    model.layers.push_back(std::move(layer));
    in = out;
  }
  const std::size_t d = config.embedding_dim;
  model.embed_w = uniform_param({in, d}, in, rng);
  model.embed_b = constant_param({1, d}, 0.0);
  model.cls_w = uniform_param({d, config.num_classes}, d, rng);
  model.cls_b = constant_param({1, config.num_classes}, 0.0);
  return model;
}

NamedTensors Model::named_parameters() const {
  NamedTensors out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string p = "layer" + std::to_string(i + 1) + ".";
    l.gcb.named(p + "gcb.", out);
    out.emplace_back(p + "gcb_scale", l.gcb_scale);
    out.emplace_back(p + "gcb_shift", l.gcb_shift);
    for (std::size_t b = 0; b < l.tcb.branches.size(); ++b) {
      out.emplace_back(p + "tcb.branch" + std::to_string(b), l.tcb.branches[b]);
    }
    out.emplace_back(p + "tcb_scale", l.tcb_scale);
    out.emplace_back(p + "tcb_shift", l.tcb_shift);
    if (!l.identity_residual()) out.emplace_back(p + "residual", l.residual);
  }
  out.emplace_back("embed_w", embed_w);
  out.emplace_back("embed_b", embed_b);
  out.emplace_back("cls_w", cls_w);
  out.emplace_back("cls_b", cls_b);
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

Tensor Model::features_before(const Tensor& x, std::size_t index) const {
  if (x.rank() != 3 || x.dim(0) != config.in_channels || x.dim(1) != config.frames ||
      x.dim(2) != config.joints) {
    throw ShapeError("model input " + shape_str(x.shape()) + " does not match expected (" +
                     std::to_string(config.in_channels) + "," + std::to_string(config.frames) + "," +
                     std::to_string(config.joints) + ")");
  }
  if (index > layers.size()) throw ConfigError("layer index out of range");
  Tensor h = x;
  for (std::size_t i = 0; i < index; ++i) h = layer_forward(h, layers[i]);
  return h;
}

Tensor Model::embed(const Tensor& x) const {
  const Tensor h = features_before(x, layers.size());
  const std::size_t c = h.dim(0);
  const Tensor pooled = reshape(mean_over_axis(mean_over_axis(h, 2), 1), {1, c});
  return add(matmul(pooled, embed_w), embed_b);
}

Tensor Model::classify(const Tensor& embeddings) const {
  return add(matmul(embeddings, cls_w), cls_b);
}

Model::Output Model::forward(const std::vector<Tensor>& batch) const {
  if (batch.empty()) throw DegenerateInputError("forward on an empty batch");
  std::vector<Tensor> rows;
  rows.reserve(batch.size());
  for (const auto& x : batch) rows.push_back(embed(x));
  Output out;
  out.embeddings = rows.size() == 1 ? rows.front() : concat(rows, 0);
  out.logits = classify(out.embeddings);
  return out;
}

namespace {

constexpr double kCalibEps = 1e-5;

// Per-channel second moment over samples, frames and joints of (C, T, V) tensors.
std::vector<double> channel_rms(const std::vector<Tensor>& outs) {
  const std::size_t c = outs.front().dim(0);
  const std::size_t plane = outs.front().numel() / c;
  std::vector<double> r(c, 0.0);
  for (const auto& o : outs) {
    const double* p = o.data().data();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < plane; ++i) r[ch] += p[ch * plane + i] * p[ch * plane + i];
  }
  for (auto& v : r) v = std::sqrt(v / static_cast<double>(plane * outs.size()));
  return r;
}

// Divides row `first + ch` of w by rms[ch]; dead channels are left alone.
void rescale_rows(Tensor w, const std::vector<double>& rms, std::size_t first = 0) {
  const std::size_t row = w.numel() / w.dim(0);
  auto d = w.data_mut();
  for (std::size_t ch = 0; ch < rms.size(); ++ch) {
    if (rms[ch] < 1e-8) continue;
    for (std::size_t i = 0; i < row; ++i) d[(first + ch) * row + i] /= rms[ch];
  }
}

template <class F>
std::vector<Tensor> map_all(const std::vector<Tensor>& xs, F f) {
  std::vector<Tensor> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(f(x));
  return out;
}

void normalize_channels(const std::vector<Tensor>& outs, Tensor scale, Tensor shift) {
  const std::size_t c = outs.front().dim(0);
  const std::size_t plane = outs.front().numel() / c;
  auto sv = scale.data_mut();
  auto bv = shift.data_mut();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0, s2 = 0.0;
    for (const auto& o : outs) {
      const double* p = o.data().data() + ch * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        s += p[i];
        s2 += p[i] * p[i];
      }
    }
    const double n = static_cast<double>(plane * outs.size());
    const double mean = s / n;
    const double var = std::max(0.0, s2 / n - mean * mean);
    sv[ch] = 1.0 / std::sqrt(var + kCalibEps);
    bv[ch] = -mean * sv[ch];
  }
}

void calibrate_gcb(const std::vector<Tensor>& xs, GcbParams& gcb) {
  for (auto& p : gcb.subsets) {
    rescale_rows(p.w_mid, channel_rms(map_all(xs, [&](const Tensor& x) { return conv1x1(x, p.w_mid); })));
    rescale_rows(p.w_s_mid, channel_rms(map_all(xs, [&](const Tensor& x) { return conv1x1(x, p.w_s_mid); })));
    rescale_rows(p.w_trans, channel_rms(map_all(xs, [&](const Tensor& x) { return conv1x1(x, p.w_trans); })));
    rescale_rows(p.w_tv, channel_rms(map_all(xs, [&](const Tensor& x) { return cvsta_saliency(x, p); })));
  }
}

}  // namespace

void calibrate(Model& model, const std::vector<Tensor>& batch) {
  if (batch.empty()) throw DegenerateInputError("calibrate needs at least one sample");
  NoGradGuard guard;
  std::vector<Tensor> h = map_all(batch, [&](const Tensor& x) { return model.features_before(x, 0); });
  for (auto& layer : model.layers) {
    calibrate_gcb(h, layer.gcb);
    const auto pre = map_all(h, [&](const Tensor& x) { return gcb_forward(x, layer.gcb); });
    normalize_channels(pre, layer.gcb_scale, layer.gcb_shift);
    const auto g = map_all(pre, [&](const Tensor& y) {
      return activation(add(mul(y, layer.gcb_scale), layer.gcb_shift), Activation::relu);
    });
    for (std::size_t b = 0; b < layer.tcb.m(); ++b) {
      Tensor w = layer.tcb.branches[b];
      rescale_rows(w, channel_rms(map_all(g, [&](const Tensor& x) {
                     return temporal_conv(x, w, layer.tcb.stride);
                   })));
    }
    const auto mid = map_all(g, [&](const Tensor& x) { return tcb_forward(x, layer.tcb); });
    normalize_channels(mid, layer.tcb_scale, layer.tcb_shift);
    if (!layer.identity_residual()) {
      rescale_rows(layer.residual, channel_rms(map_all(h, [&](const Tensor& x) {
                     return temporal_conv(x, layer.residual, layer.stride);
                   })));
    }
    for (auto& x : h) x = layer_forward(x, layer);
  }
}

std::pair<Tensor, Tensor> model_forward(const Tensor& x, const Model& model) {
  const auto out = model.forward({x});
  return {reshape(out.embeddings, {model.config.embedding_dim}),
          reshape(out.logits, {model.config.num_classes})};
}

namespace {
constexpr const char* kManifestHeader = "MDRCKPT 1";
}

void save_checkpoint(const std::filesystem::path& dir, const Model& model,
                     const std::optional<Tensor>& centers, const KeyValues& metadata) {
  std::filesystem::create_directories(dir);
  KeyValues cfg = metadata;
  model.config.write_to(cfg);
  cfg.save(dir / "config.txt");
  {
    std::ofstream gs(dir / "graph.txt");
    if (!gs) throw FormatError("cannot write " + (dir / "graph.txt").string());
    graph::write_graph_spec(gs, model.graph);
  }
  auto named = model.named_parameters();
  if (centers) named.emplace_back("centers", *centers);
  std::ofstream manifest(dir / "manifest.txt");
  std::ofstream bin(dir / "tensors.bin", std::ios::binary);
  if (!manifest || !bin) throw FormatError("cannot write checkpoint into " + dir.string());
  manifest << kManifestHeader << "\n";
  for (const auto& [name, t] : named) {
    manifest << name << ' ' << join_sizes(t.shape()) << "\n";
    write_tensor(bin, t);
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw FormatError("checkpoint " + dir.string() + " not found");
  const KeyValues cfg = KeyValues::load(dir / "config.txt");
  const ModelConfig config = ModelConfig::read_from(cfg);
  const auto graph = graph::load_graph_file(dir / "graph.txt", config.partition);
  Checkpoint ck{Model::init(config, graph, 0), std::nullopt, KeyValues{}};
  for (const auto& [k, v] : cfg.entries()) {
    if (k.rfind("model.", 0) != 0) ck.metadata.set(k, v);
  }

  std::ifstream manifest(dir / "manifest.txt");
  std::ifstream bin(dir / "tensors.bin", std::ios::binary);
  if (!manifest || !bin) throw FormatError("checkpoint " + dir.string() + " is incomplete");
  std::string line;
  if (!std::getline(manifest, line) || line != kManifestHeader) {
    throw FormatError("checkpoint manifest has a bad header");
  }
  auto named = ck.model.named_parameters();
  std::size_t index = 0;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string name, dims;
    fields >> name >> dims;
    Tensor stored = read_tensor(bin);
    if (join_sizes(stored.shape()) != dims) {
      throw FormatError("checkpoint entry '" + name + "' disagrees with its manifest shape");
    }
    if (name == "centers") {
      ck.centers = stored;
      continue;
    }
    if (index >= named.size() || named[index].first != name) {
      throw FormatError("checkpoint entry '" + name + "' does not match the model layout");
    }
    Tensor& target = named[index].second;
    if (target.shape() != stored.shape()) {
      throw FormatError("checkpoint entry '" + name + "' has shape " + shape_str(stored.shape()) +
                        ", model expects " + shape_str(target.shape()));
    }
    std::copy(stored.data().begin(), stored.data().end(), target.data_mut().begin());
    ++index;
  }
  if (index != named.size()) throw FormatError("checkpoint is missing parameters");
  return ck;
}

}  // namespace mdr::nn
