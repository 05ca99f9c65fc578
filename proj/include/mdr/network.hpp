#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "mdr/cvsta.hpp"
#include "mdr/kv_config.hpp"
#include "mdr/skeleton_graph.hpp"

namespace mdr::nn {

/// Architecture hyperparameters. Defaults follow the full-size network:
/// ten layers 64-64-64-64-128-128-128-256-256-256 with temporal stride 2 at
/// layers 5 and 8, C_mid = C_in/8, tanh attention, m = 2 temporal kernels,
/// D = 256 embedding features.
struct ModelConfig {
  std::vector<std::size_t> channels{64, 64, 64, 64, 128, 128, 128, 256, 256, 256};
  std::vector<std::size_t> strides{1, 1, 1, 1, 2, 1, 1, 2, 1, 1};
  CMidRule c_mid{8, false};
  Activation sigma = Activation::tanh;
  std::size_t m = 2;
  graph::PartitionStrategy partition = graph::PartitionStrategy::spatial;
  std::size_t embedding_dim = 256;
  std::size_t num_classes = 5;
  std::size_t in_channels = 3;
  std::size_t frames = 64;
  std::size_t joints = 25;

  std::size_t num_layers() const { return channels.size(); }
  std::size_t num_subsets() const { return partition == graph::PartitionStrategy::spatial ? 3 : 1; }
  /// Frame count seen by the GCB of `layer` (before that layer's stride).
  std::size_t frames_at_layer(std::size_t layer) const;
  std::size_t output_frames() const;

  /// Throws ConfigError when the schedule is inconsistent.
  void validate() const;

  /// Keys are written with the given prefix, e.g. "model.channels".
  void write_to(KeyValues& kv, const std::string& prefix = "model.") const;
  static ModelConfig read_from(const KeyValues& kv, const std::string& prefix = "model.");

  /// Three layers 8-8-16 on the nine-joint toy body, 16 frames, 3 classes.
  static ModelConfig tiny();
};

/// m parallel temporal convolutions with kernel sizes 3, 5, ..., 2m+1, each
/// producing C/m channels; outputs are concatenated back to C channels.
struct TcbParams {
  std::vector<Tensor> branches;  // branch b: (C/m, C, 2b+3)
  std::size_t stride = 1;

  std::size_t m() const { return branches.size(); }
  static TcbParams init(std::size_t channels, std::size_t m, std::size_t stride, std::mt19937_64& rng);
};

Tensor tcb_forward(const Tensor& x, const TcbParams& p);

/// GCB -> affine -> relu -> TCB -> affine, plus residual, then relu.
/// The per-channel affine pairs sit where batch normalization usually goes.
struct MdrLayer {
  GcbParams gcb;
  Tensor gcb_scale, gcb_shift;  // (C_out,1,1)
  TcbParams tcb;
  Tensor tcb_scale, tcb_shift;  // (C_out,1,1)
  Tensor residual;              // (C_out,C_in,1) projection, undefined for identity
  std::size_t stride = 1;

  bool identity_residual() const { return !residual.defined(); }
};

Tensor layer_forward(const Tensor& x, const MdrLayer& layer);

/// Full network: MDR layers, global average pooling, embedding FC, classifier.
struct Model {
  ModelConfig config;
  graph::SkeletonGraph graph;
  std::vector<MdrLayer> layers;
  Tensor embed_w;  // (C_last, D)
  Tensor embed_b;  // (1, D)
  Tensor cls_w;    // (D, M)
  Tensor cls_b;    // (1, M)

  static Model init(const ModelConfig& config, const graph::SkeletonGraph& graph, std::uint64_t seed);

  /// Stable ordering used by the optimizer and checkpoints.
  NamedTensors named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  /// Embedding row (1, D) for one (C_in, T, V) sample.
  Tensor embed(const Tensor& x) const;
  /// Input of layer `index` (0 = raw sample).
  Tensor features_before(const Tensor& x, std::size_t index) const;
  /// Logits (N, M) from embeddings (N, D).
  Tensor classify(const Tensor& embeddings) const;

  struct Output {
    Tensor embeddings;  // (N, D)
    Tensor logits;      // (N, M)
  };
  Output forward(const std::vector<Tensor>& batch) const;
};

/// Data-dependent init, layer by layer on `batch`: weight rows are rescaled so
/// every attention stage, temporal branch and residual projection has unit rms
/// per channel, then the affine pairs give the GCB and TCB outputs zero mean
/// and unit variance. Without it the signal, and the multiplicative attention
/// path most of all, shrinks with depth.
void calibrate(Model& model, const std::vector<Tensor>& batch);

/// Single-sample forward: embedding (D) and logits (M).
std::pair<Tensor, Tensor> model_forward(const Tensor& x, const Model& model);

/// Checkpoint directory: config.txt (key=value), graph.txt (graph spec),
/// manifest.txt (one "name dims" line per tensor, in order) and tensors.bin
/// (the tensor binaries concatenated in manifest order). Class centers, when
/// present, are stored as the trailing "centers" entry.
struct Checkpoint {
  Model model;
  std::optional<Tensor> centers;
  KeyValues metadata;
};

void save_checkpoint(const std::filesystem::path& dir, const Model& model,
                     const std::optional<Tensor>& centers, const KeyValues& metadata = {});
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace mdr::nn
