#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mdr/kv_config.hpp"
#include "mdr/network.hpp"
#include "mdr/rdl.hpp"
#include "mdr/synth.hpp"

namespace mdr::train {

struct OptimizerConfig {
  double lr = 0.1;
  double momentum = 0.9;
  bool nesterov = true;
  /// Epoch fractions at which the learning rate is multiplied by `decay`.
  std::vector<double> milestones{0.6, 0.9};
  double decay = 0.1;
  /// Rescales the full gradient when its L2 norm exceeds this; 0 disables.
  double clip_norm = 0.0;
};

struct OptimizerState {
  double base_lr = 0.1;
  double lr = 0.1;
  double momentum = 0.9;
  bool nesterov = true;
  double decay = 0.1;
  double clip_norm = 0.0;
  std::vector<std::size_t> milestone_epochs;
  std::vector<std::vector<double>> velocity;  // mirrors parameter shapes

  static OptimizerState init(const std::vector<Tensor>& params, const OptimizerConfig& cfg,
                             std::size_t epochs);
  /// Learning rate for a 0-based epoch: base * decay^(milestones passed).
  double lr_at(std::size_t epoch) const;
};

/// v <- mu v + g; p <- p - lr (g + mu v) with Nesterov, p <- p - lr v without.
void sgd_step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads, OptimizerState& state);
/// Each parameter's accumulated gradient, zeros where none was recorded.
std::vector<Tensor> collect_grads(const std::vector<Tensor>& params);

struct RunConfig {
  nn::ModelConfig model;
  loss::RdlConfig rdl;
  OptimizerConfig optim;
  bool use_rdl = true;
  loss::Reduction reduction = loss::Reduction::mean;
  double center_lr = 0.5;
  double epsilon = 0.0;
  std::size_t epochs = 20;
  std::size_t batch_size = 48;
  std::uint64_t seed = 1;
  /// Sets the affine pairs from one batch of training data before the first step.
  bool calibrate = true;
  std::filesystem::path dataset;
  std::filesystem::path output_dir;
  std::filesystem::path graph_file;  // empty: nine-joint toy skeleton
  /// Dropout noise applied to every sample after loading (both splits).
  double noise_fraction = 0.0;
  data::NoiseMode noise_mode = data::NoiseMode::joint;
  std::uint64_t noise_seed = 99;

  /// Desk-scale preset: four layers 8-8-16-16 on the toy body, lr 0.03 with
  /// gradient clipping at 1, center_lr 0.05, 30 epochs.
  static RunConfig toy();
  void validate() const;
  void write_to(KeyValues& kv) const;
  /// Keys absent from `kv` keep the values of `base`.
  static RunConfig read_from(const KeyValues& kv, const RunConfig& base = toy());
};

/// One row of the metrics log. Loss columns are batch averages over the epoch.
struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double l_s = 0.0;
  double l_a_in = 0.0;
  double l_a_out = 0.0;
  double l_l = 0.0;
  double total = 0.0;
  double intra_cos = 0.0;
  double inter_cos = 0.0;
  double beta = 0.0;
  double lr = 0.0;
  double test_accuracy = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,L_S,L_Ain,L_Aout,L_l,total,intra_cos,inter_cos,beta";
/// Fixed formatting (%.10e) so identical runs produce identical bytes.
std::string format_metrics(const EpochMetrics& m);

struct EvalMetrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;  // NaN for classes absent from the data
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  double intra_cos_centers = 0.0;    // mean cos<x_i, c_{y_i}>, NaN without centers
  double intra_cos_means = 0.0;      // mean cos<x_i, mean embedding of class y_i>
  double center_pair_cos = 0.0;      // mean cos between distinct centers, NaN without centers
};

EvalMetrics evaluate(const nn::Model& model, const std::optional<Tensor>& centers,
                     const data::Dataset& ds);
/// Throws ConfigError when the checkpoint and dataset disagree on classes or shapes.
EvalMetrics evaluate(const nn::Checkpoint& ck, const data::Dataset& ds);
void write_eval_report(std::ostream& os, const EvalMetrics& m);

struct TrainResult {
  std::vector<EpochMetrics> history;
  nn::Model model;               // best-accuracy parameters
  loss::ClassCenters centers;    // centers of the best epoch
  double best_accuracy = 0.0;
  std::size_t best_epoch = 0;    // 0 when no epoch improved on the initialization
};

/// Trains on the train split and scores the test split after every epoch.
/// When cfg.output_dir is set, writes metrics.csv, run.txt and checkpoint/
/// (the best-accuracy parameters; the initialization when epochs is 0).
/// `progress` receives one human-readable line per epoch.
TrainResult train(const RunConfig& cfg, const data::Dataset& ds, std::ostream* progress = nullptr);
/// Loads cfg.dataset and cfg.graph_file, then trains.
TrainResult train(const RunConfig& cfg, std::ostream* progress = nullptr);

/// Channel- and subset-averaged attention maps of one layer, each (T_layer, V).
struct AttentionMaps {
  Tensor saliency;     // f_R
  Tensor transformed;  // f_TV
};

/// `layer` is 1-based.
AttentionMaps attention_maps(const nn::Model& model, const Tensor& sample, std::size_t layer);
/// Writes <prefix>_fr.csv, <prefix>_ftv.csv and matching .mdrt files.
AttentionMaps export_attention(const nn::Model& model, const Tensor& sample, std::size_t layer,
                               const std::filesystem::path& prefix);

void write_csv_matrix(std::ostream& os, const Tensor& m);

}  // namespace mdr::train
