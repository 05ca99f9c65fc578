#include "mdr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "mdr/error.hpp"
#include "mdr/ops.hpp"
#include "mdr/serialize.hpp"

namespace mdr::train {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double cosine(const double* a, const double* b, std::size_t d) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(const std::vector<Tensor>& params) {
  Snapshot s;
  s.reserve(params.size());
  for (const auto& p : params) s.emplace_back(p.data().begin(), p.data().end());
  return s;
}

void restore(const std::vector<Tensor>& params, const Snapshot& s) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor handle = params[i];
    auto dst = handle.data_mut();
    std::copy(s[i].begin(), s[i].end(), dst.begin());
  }
}

// Embeddings (N, D) and logits (N, M) of a whole dataset without recording a tape.
std::pair<Tensor, Tensor> infer(const nn::Model& model, const data::Dataset& ds) {
  NoGradGuard guard;
  const std::size_t d = model.config.embedding_dim, m = model.config.num_classes;
  std::vector<double> emb, logits;
  emb.reserve(ds.samples.size() * d);
  logits.reserve(ds.samples.size() * m);
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < ds.samples.size(); start += kChunk) {
    std::vector<Tensor> batch;
    for (std::size_t i = start; i < std::min(ds.samples.size(), start + kChunk); ++i) {
      batch.push_back(ds.samples[i].x);
    }
    const auto out = model.forward(batch);
    emb.insert(emb.end(), out.embeddings.data().begin(), out.embeddings.data().end());
    logits.insert(logits.end(), out.logits.data().begin(), out.logits.data().end());
  }
  const std::size_t n = ds.samples.size();
  return {Tensor({n, d}, std::move(emb)), Tensor({n, m}, std::move(logits))};
}

std::size_t argmax_row(const double* row, std::size_t m) {
  return static_cast<std::size_t>(std::max_element(row, row + m) - row);
}

double accuracy_of(const nn::Model& model, const data::Dataset& ds) {
  if (ds.samples.empty()) return 0.0;
  const auto [emb, logits] = infer(model, ds);
  const std::size_t m = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (argmax_row(logits.data().data() + i * m, m) == ds.samples[i].label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.samples.size());
}

void check_compatible(const nn::ModelConfig& cfg, const data::Dataset& ds) {
  if (ds.num_classes != cfg.num_classes) {
    throw ConfigError("dataset has " + std::to_string(ds.num_classes) + " classes, model has " +
                      std::to_string(cfg.num_classes));
  }
  if (!ds.samples.empty() && (ds.frames() != cfg.frames || ds.joints() != cfg.joints)) {
    throw ConfigError("dataset samples are " + std::to_string(ds.frames()) + " frames x " +
                      std::to_string(ds.joints()) + " joints, model expects " +
                      std::to_string(cfg.frames) + " x " + std::to_string(cfg.joints));
  }
}

}  // namespace

OptimizerState OptimizerState::init(const std::vector<Tensor>& params, const OptimizerConfig& cfg,
                                    std::size_t epochs) {
  if (!(cfg.lr > 0.0)) throw ConfigError("optim.lr must be positive");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw ConfigError("optim.momentum must lie in [0, 1)");
  if (!(cfg.decay > 0.0)) throw ConfigError("optim.decay must be positive");
  if (cfg.clip_norm < 0.0) throw ConfigError("optim.clip_norm must be non-negative");
  OptimizerState s;
  s.base_lr = s.lr = cfg.lr;
  s.momentum = cfg.momentum;
  s.nesterov = cfg.nesterov;
  s.decay = cfg.decay;
  s.clip_norm = cfg.clip_norm;
  for (double f : cfg.milestones) {
    if (f < 0.0 || f > 1.0) throw ConfigError("optim.milestones are epoch fractions in [0, 1]");
    s.milestone_epochs.push_back(static_cast<std::size_t>(std::llround(f * static_cast<double>(epochs))));
  }
  for (const auto& p : params) s.velocity.emplace_back(p.numel(), 0.0);
  return s;
}

double OptimizerState::lr_at(std::size_t epoch) const {
  double lr_e = base_lr;
  for (auto m : milestone_epochs)
    if (epoch >= m) lr_e *= decay;
  return lr_e;
}

std::vector<Tensor> collect_grads(const std::vector<Tensor>& params) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.has_grad() ? p.grad_tensor() : Tensor(p.shape(), 0.0));
  return grads;
}

void sgd_step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads, OptimizerState& state) {
  if (params.size() != grads.size() || params.size() != state.velocity.size()) {
    throw ShapeError("sgd_step: parameter, gradient and velocity counts differ");
  }
  double scale_g = 1.0;
  if (state.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& g : grads)
      for (double v : g.data()) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > state.clip_norm) scale_g = state.clip_norm / norm;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || state.velocity[i].size() != params[i].numel()) {
      throw ShapeError("sgd_step: gradient " + shape_str(grads[i].shape()) + " does not match parameter " +
                       shape_str(params[i].shape()));
    }
    Tensor handle = params[i];
    auto p = handle.data_mut();
    const auto g = grads[i].data();
    auto& v = state.velocity[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = scale_g * g[j];
      v[j] = state.momentum * v[j] + gj;
      p[j] -= state.lr * (state.nesterov ? gj + state.momentum * v[j] : v[j]);
    }
  }
}

RunConfig RunConfig::toy() {
  RunConfig c;
  c.model.channels = {8, 8, 16, 16};
  c.model.strides = {1, 2, 1, 2};
  c.model.embedding_dim = 32;
  c.model.num_classes = 5;
  c.model.frames = 32;
  c.model.joints = 9;
  // Without normalization layers lr 0.1 diverges within the first epoch here.
  c.optim.lr = 0.03;
  c.optim.clip_norm = 1.0;
  // Faster centers chase the shared direction of the early embeddings and collapse together.
  c.center_lr = 0.05;
  c.epochs = 30;
  return c;
}

void RunConfig::validate() const {
  model.validate();
  rdl.validate();
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (center_lr < 0.0) throw ConfigError("rdl.center_lr must be non-negative");
  if (epsilon < 0.0) throw ConfigError("rdl.epsilon must be non-negative");
  if (noise_fraction < 0.0 || noise_fraction > 1.0) throw ConfigError("data.noise_fraction must lie in [0, 1]");
  if (rdl.ascend_a_out && !use_rdl) throw ConfigError("rdl.ascend_a_out requires rdl.enabled");
}

void RunConfig::write_to(KeyValues& kv) const {
  model.write_to(kv, "model.");
  kv.set("rdl.enabled", use_rdl ? "true" : "false");
  if (rdl.lambda1) kv.set("rdl.lambda1", format_double(*rdl.lambda1));
  if (rdl.lambda2) kv.set("rdl.lambda2", format_double(*rdl.lambda2));
  kv.set("rdl.use_a_in", rdl.use_a_in ? "true" : "false");
  kv.set("rdl.use_a_out", rdl.use_a_out ? "true" : "false");
  kv.set("rdl.use_l", rdl.use_l ? "true" : "false");
  kv.set("rdl.ascend_a_out", rdl.ascend_a_out ? "true" : "false");
  kv.set("rdl.center_lr", format_double(center_lr));
  kv.set("rdl.epsilon", format_double(epsilon));
  kv.set("loss.reduction", reduction == loss::Reduction::sum ? "sum" : "mean");
  kv.set("optim.lr", format_double(optim.lr));
  kv.set("optim.momentum", format_double(optim.momentum));
  kv.set("optim.nesterov", optim.nesterov ? "true" : "false");
  std::string ms;
  for (double f : optim.milestones) ms += (ms.empty() ? "" : ",") + format_double(f);
  kv.set("optim.milestones", ms);
  kv.set("optim.decay", format_double(optim.decay));
  kv.set("optim.clip_norm", format_double(optim.clip_norm));
  kv.set("train.epochs", std::to_string(epochs));
  kv.set("train.batch_size", std::to_string(batch_size));
  kv.set("train.seed", std::to_string(seed));
  kv.set("train.calibrate", calibrate ? "true" : "false");
  kv.set("data.path", dataset.string());
  kv.set("data.graph", graph_file.string());
  kv.set("data.noise_fraction", format_double(noise_fraction));
  kv.set("data.noise_mode", noise_mode == data::NoiseMode::axis ? "axis" : "joint");
  kv.set("data.noise_seed", std::to_string(noise_seed));
  kv.set("out.dir", output_dir.string());
}

RunConfig RunConfig::read_from(const KeyValues& kv, const RunConfig& base) {
  RunConfig c = base;
  KeyValues merged;
  base.model.write_to(merged, "model.");
  for (const auto& [k, v] : kv.entries())
    if (k.rfind("model.", 0) == 0) merged.set(k, v);
  c.model = nn::ModelConfig::read_from(merged, "model.");
  c.use_rdl = kv.get_bool("rdl.enabled", c.use_rdl);
  if (kv.has("rdl.lambda1")) c.rdl.lambda1 = kv.get_double("rdl.lambda1", 0.0);
  if (kv.has("rdl.lambda2")) c.rdl.lambda2 = kv.get_double("rdl.lambda2", 0.0);
  c.rdl.use_a_in = kv.get_bool("rdl.use_a_in", c.rdl.use_a_in);
  c.rdl.use_a_out = kv.get_bool("rdl.use_a_out", c.rdl.use_a_out);
  c.rdl.use_l = kv.get_bool("rdl.use_l", c.rdl.use_l);
  c.rdl.ascend_a_out = kv.get_bool("rdl.ascend_a_out", c.rdl.ascend_a_out);
  c.center_lr = kv.get_double("rdl.center_lr", c.center_lr);
  c.epsilon = kv.get_double("rdl.epsilon", c.epsilon);
  if (kv.has("loss.reduction")) c.reduction = loss::parse_reduction(kv.get_string("loss.reduction", ""));
  c.optim.lr = kv.get_double("optim.lr", c.optim.lr);
  c.optim.momentum = kv.get_double("optim.momentum", c.optim.momentum);
  c.optim.nesterov = kv.get_bool("optim.nesterov", c.optim.nesterov);
  c.optim.milestones = kv.get_doubles("optim.milestones", c.optim.milestones);
  c.optim.decay = kv.get_double("optim.decay", c.optim.decay);
  c.optim.clip_norm = kv.get_double("optim.clip_norm", c.optim.clip_norm);
  c.epochs = kv.get_size("train.epochs", c.epochs);
  c.batch_size = kv.get_size("train.batch_size", c.batch_size);
  c.seed = static_cast<std::uint64_t>(kv.get_size("train.seed", c.seed));
  c.calibrate = kv.get_bool("train.calibrate", c.calibrate);
  c.dataset = kv.get_string("data.path", c.dataset.string());
  c.graph_file = kv.get_string("data.graph", c.graph_file.string());
  c.noise_fraction = kv.get_double("data.noise_fraction", c.noise_fraction);
  if (kv.has("data.noise_mode")) c.noise_mode = data::parse_noise_mode(kv.get_string("data.noise_mode", ""));
  c.noise_seed = static_cast<std::uint64_t>(kv.get_size("data.noise_seed", c.noise_seed));
  c.output_dir = kv.get_string("out.dir", c.output_dir.string());
  return c;
}

std::string format_metrics(const EpochMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%.10e,%.10e,%.10e,%.10e,%.10e,%.10e,%.10e,%.10e", m.epoch, m.l_s,
                m.l_a_in, m.l_a_out, m.l_l, m.total, m.intra_cos, m.inter_cos, m.beta);
  return buf;
}

EvalMetrics evaluate(const nn::Model& model, const std::optional<Tensor>& centers, const data::Dataset& ds) {
  check_compatible(model.config, ds);
  const std::size_t m = model.config.num_classes, d = model.config.embedding_dim;
  if (centers && (centers->rank() != 2 || centers->dim(0) != m || centers->dim(1) != d)) {
    throw ConfigError("centers " + shape_str(centers->shape()) + " do not match the model");
  }
  EvalMetrics out;
  out.count = ds.samples.size();
  out.confusion.assign(m, std::vector<std::size_t>(m, 0));
  out.per_class_accuracy.assign(m, kNaN);
  if (ds.samples.empty()) {
    out.accuracy = out.intra_cos_centers = out.intra_cos_means = kNaN;
    out.center_pair_cos = kNaN;
    return out;
  }
  const auto [emb, logits] = infer(model, ds);
  const auto ev = emb.data();
  const auto lv = logits.data();
  std::size_t hits = 0;
  std::vector<double> means(m * d, 0.0);
  std::vector<std::size_t> per_class(m, 0);
  for (std::size_t i = 0; i < out.count; ++i) {
    const std::size_t y = ds.samples[i].label;
    const std::size_t pred = argmax_row(lv.data() + i * m, m);
    ++out.confusion[y][pred];
    if (pred == y) ++hits;
    ++per_class[y];
    for (std::size_t k = 0; k < d; ++k) means[y * d + k] += ev[i * d + k];
  }
  out.accuracy = static_cast<double>(hits) / static_cast<double>(out.count);
  for (std::size_t j = 0; j < m; ++j) {
    if (per_class[j] == 0) continue;
    out.per_class_accuracy[j] = static_cast<double>(out.confusion[j][j]) / static_cast<double>(per_class[j]);
    for (std::size_t k = 0; k < d; ++k) means[j * d + k] /= static_cast<double>(per_class[j]);
  }
  double to_means = 0.0, to_centers = 0.0;
  for (std::size_t i = 0; i < out.count; ++i) {
    const std::size_t y = ds.samples[i].label;
    to_means += cosine(ev.data() + i * d, means.data() + y * d, d);
    if (centers) to_centers += cosine(ev.data() + i * d, centers->data().data() + y * d, d);
  }
  out.intra_cos_means = to_means / static_cast<double>(out.count);
  out.intra_cos_centers = centers ? to_centers / static_cast<double>(out.count) : kNaN;
  out.center_pair_cos = kNaN;
  if (centers && m > 1) {
    double s = 0.0;
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = a + 1; b < m; ++b)
        s += cosine(centers->data().data() + a * d, centers->data().data() + b * d, d);
    out.center_pair_cos = s / static_cast<double>(m * (m - 1) / 2);
  }
  return out;
}

EvalMetrics evaluate(const nn::Checkpoint& ck, const data::Dataset& ds) {
  return evaluate(ck.model, ck.centers, ds);
}

void write_eval_report(std::ostream& os, const EvalMetrics& m) {
  char buf[160];
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%s=%.10g\n", key, v);
    os << buf;
  };
  os << "count=" << m.count << '\n';
  line("accuracy", m.accuracy);
  for (std::size_t j = 0; j < m.per_class_accuracy.size(); ++j) {
    std::snprintf(buf, sizeof buf, "class%zu_accuracy=%.10g\n", j, m.per_class_accuracy[j]);
    os << buf;
  }
  line("intra_cos_centers", m.intra_cos_centers);
  line("intra_cos_means", m.intra_cos_means);
  line("center_pair_cos", m.center_pair_cos);
  os << "confusion (rows true, columns predicted)\n";
  for (const auto& row : m.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) os << (j ? " " : "") << row[j];
    os << '\n';
  }
}

TrainResult train(const RunConfig& cfg_in, const data::Dataset& ds_in, std::ostream* progress) {
  RunConfig cfg = cfg_in;
  cfg.validate();
  data::Dataset ds = cfg.noise_fraction > 0.0
                         ? data::inject_noise(ds_in, cfg.noise_fraction, cfg.noise_seed, cfg.noise_mode)
                         : ds_in;
  check_compatible(cfg.model, ds);
  const data::Dataset train_set = ds.subset(data::Split::train);
  const data::Dataset test_set = ds.subset(data::Split::test);
  if (train_set.samples.empty()) throw ConfigError("dataset has no training samples");

  const auto graph = cfg.graph_file.empty()
                         ? graph::toy_skeleton(cfg.model.partition)
                         : graph::load_graph_file(cfg.graph_file, cfg.model.partition);
  std::mt19937_64 master(cfg.seed);
  const std::uint64_t model_seed = master();
  std::mt19937_64 center_rng(master());
  std::mt19937_64 shuffle_rng(master());

  TrainResult result;
  result.model = nn::Model::init(cfg.model, graph, model_seed);
  if (cfg.calibrate) {
    // Evenly spaced training samples, so every class contributes.
    std::vector<Tensor> calib;
    const std::size_t n = train_set.samples.size(), k = std::min(n, cfg.batch_size);
    for (std::size_t i = 0; i < k; ++i) calib.push_back(train_set.samples[i * n / k].x);
    nn::calibrate(result.model, calib);
  }
  auto centers = loss::ClassCenters::init(cfg.model.num_classes, cfg.model.embedding_dim, center_rng);
  centers.epsilon = cfg.epsilon;
  centers.center_lr = cfg.center_lr;

  const auto params = result.model.parameters();
  auto state = OptimizerState::init(params, cfg.optim, cfg.epochs);

  std::ofstream metrics_file;
  KeyValues meta;
  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    KeyValues run;
    cfg.write_to(run);
    run.save(cfg.output_dir / "run.txt");
    metrics_file.open(cfg.output_dir / "metrics.csv");
    if (!metrics_file) throw ConfigError("cannot write " + (cfg.output_dir / "metrics.csv").string());
    metrics_file << kMetricsHeader << '\n';
    meta.set("rdl.epsilon", format_double(cfg.epsilon));
    meta.set("rdl.center_lr", format_double(cfg.center_lr));
    meta.set("train.seed", std::to_string(cfg.seed));
  }

  Snapshot best_params = snapshot(params);
  Tensor best_centers = centers.c;
  result.best_accuracy = test_set.samples.empty() ? 0.0 : accuracy_of(result.model, test_set);
  result.best_epoch = 0;

  std::vector<std::size_t> order(train_set.samples.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batches = (order.size() + cfg.batch_size - 1) / cfg.batch_size;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    state.lr = state.lr_at(epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochMetrics em;
    em.epoch = epoch + 1;
    em.lr = state.lr;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(order.size(), lo + cfg.batch_size);
      std::vector<Tensor> xs;
      std::vector<std::size_t> ys;
      for (std::size_t i = lo; i < hi; ++i) {
        xs.push_back(train_set.samples[order[i]].x);
        ys.push_back(train_set.samples[order[i]].label);
      }
      Tensor loss_value;
      nn::Model::Output out;
      try {
        out = result.model.forward(xs);
        loss_value = loss::total_loss(out.logits, out.embeddings, ys, centers, cfg.rdl, cfg.reduction,
                                      cfg.use_rdl);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(b) + ": " +
                           e.what());
      }
      const Tensor emb = out.embeddings.detach();
      double l_s = 0.0;
      {
        NoGradGuard guard;
        l_s = loss::softmax_ce(out.logits.detach(), ys, cfg.reduction).item();
      }
      const auto terms = loss::rdl_terms(emb, ys, centers, cfg.rdl);
      const auto stats = loss::embedding_stats(emb, ys, centers.c, centers.epsilon);
      em.l_s += l_s;
      em.l_a_in += terms.a_in;
      em.l_a_out += terms.a_out;
      em.l_l += terms.l;
      em.total += loss_value.item();
      em.intra_cos += stats.intra_cos;
      em.inter_cos += stats.inter_cos;
      em.beta += stats.beta;

      loss_value.backward();
      // Centers are tracked in both variants so compactness can be compared.
      loss::update_centers(centers, emb, ys, cfg.rdl);
      const auto grads = collect_grads(params);
      for (const auto& g : grads) {
        for (double v : g.data()) {
          if (!std::isfinite(v)) {
            throw NumericError("epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(b) +
                               ": non-finite gradient");
          }
        }
      }
      sgd_step(params, grads, state);
      for (Tensor p : params) p.zero_grad();
    }
    const double nb = static_cast<double>(batches);
    em.l_s /= nb;
    em.l_a_in /= nb;
    em.l_a_out /= nb;
    em.l_l /= nb;
    em.total /= nb;
    em.intra_cos /= nb;
    em.inter_cos /= nb;
    em.beta /= nb;
    em.test_accuracy = test_set.samples.empty() ? 0.0 : accuracy_of(result.model, test_set);
    // Ties go to the later epoch, which has seen more updates.
    if (em.test_accuracy >= result.best_accuracy) {
      result.best_accuracy = em.test_accuracy;
      result.best_epoch = em.epoch;
      best_params = snapshot(params);
      best_centers = centers.c;
    }
    result.history.push_back(em);
    if (metrics_file.is_open()) metrics_file << format_metrics(em) << '\n' << std::flush;
    if (progress) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "epoch %zu/%zu lr %.4g loss %.5f test_acc %.4f intra_cos %.4f\n",
                    em.epoch, cfg.epochs, em.lr, em.total, em.test_accuracy, em.intra_cos);
      *progress << buf << std::flush;
    }
  }

  restore(params, best_params);
  centers.c = best_centers;
  result.centers = centers;
  if (!cfg.output_dir.empty()) {
    meta.set("train.best_epoch", std::to_string(result.best_epoch));
    meta.set("train.best_accuracy", format_double(result.best_accuracy));
    nn::save_checkpoint(cfg.output_dir / "checkpoint", result.model, centers.c, meta);
  }
  return result;
}

TrainResult train(const RunConfig& cfg, std::ostream* progress) {
  if (cfg.dataset.empty()) throw ConfigError("data.path is not set");
  if (!std::filesystem::exists(cfg.dataset)) {
    throw ConfigError("dataset " + cfg.dataset.string() + " does not exist");
  }
  if (!cfg.graph_file.empty() && !std::filesystem::exists(cfg.graph_file)) {
    throw ConfigError("graph file " + cfg.graph_file.string() + " does not exist");
  }
  return train(cfg, data::load_dataset(cfg.dataset), progress);
}

AttentionMaps attention_maps(const nn::Model& model, const Tensor& sample, std::size_t layer) {
  if (layer == 0 || layer > model.layers.size()) {
    throw ConfigError("attention layer " + std::to_string(layer) + " out of range 1.." +
                      std::to_string(model.layers.size()));
  }
  NoGradGuard guard;
  const Tensor h = model.features_before(sample, layer - 1);
  const auto& gcb = model.layers[layer - 1].gcb;
  const std::size_t t_count = h.dim(1), v_count = h.dim(2);
  std::vector<double> fr(t_count * v_count, 0.0), ftv(t_count * v_count, 0.0);
  std::size_t channels = 0;
  for (const auto& p : gcb.subsets) {
    const auto trace = nn::cvsta_trace(h, p);
    const std::size_t c = trace.f_r.dim(0);
    channels += c;
    const auto rv = trace.f_r.data();
    const auto tv = trace.f_tv.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < t_count * v_count; ++i) {
        fr[i] += rv[ch * t_count * v_count + i];
        ftv[i] += tv[ch * t_count * v_count + i];
      }
    }
  }
  for (auto& v : fr) v /= static_cast<double>(channels);
  for (auto& v : ftv) v /= static_cast<double>(channels);
  return {Tensor({t_count, v_count}, std::move(fr)), Tensor({t_count, v_count}, std::move(ftv))};
}

void write_csv_matrix(std::ostream& os, const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("write_csv_matrix expects a matrix, got " + shape_str(m.shape()));
  char buf[40];
  for (std::size_t r = 0; r < m.dim(0); ++r) {
    for (std::size_t c = 0; c < m.dim(1); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m.data()[r * m.dim(1) + c]);
      os << (c ? "," : "") << buf;
    }
    os << '\n';
  }
}

AttentionMaps export_attention(const nn::Model& model, const Tensor& sample, std::size_t layer,
                               const std::filesystem::path& prefix) {
  auto maps = attention_maps(model, sample, layer);
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  auto emit = [&](const Tensor& t, const std::string& tag) {
    const std::string base = prefix.string() + "_" + tag;
    std::ofstream os(base + ".csv");
    if (!os) throw ConfigError("cannot write " + base + ".csv");
    write_csv_matrix(os, t);
    save_tensor(base + ".mdrt", t);
  };
  emit(maps.saliency, "fr");
  emit(maps.transformed, "ftv");
  return maps;
}

}  // namespace mdr::train
