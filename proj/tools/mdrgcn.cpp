#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mdr/error.hpp"
#include "mdr/gradcheck.hpp"
#include "mdr/kv_config.hpp"
#include "mdr/network.hpp"
#include "mdr/synth.hpp"
#include "mdr/train.hpp"

namespace {

using namespace mdr;

constexpr int kConfigFailure = 1;
constexpr int kNumericFailure = 2;

// --config file first, then --set overrides in command-line order.
KeyValues gather(const std::string& config_path, const std::vector<std::string>& overrides) {
  KeyValues kv = config_path.empty() ? KeyValues{} : KeyValues::load(config_path);
  for (const auto& o : overrides) kv.apply_override(o);
  return kv;
}

int cmd_generate(const KeyValues& kv, const std::string& out, bool print_config) {
  const auto spec = data::SynthSpec::read_from(kv, data::default_spec());
  if (print_config) {
    KeyValues shown;
    spec.write_to(shown);
    shown.write(std::cout);
    return 0;
  }
  if (out.empty()) throw ConfigError("generate needs --out");
  const auto ds = data::generate(spec, graph::toy_skeleton());
  data::save_dataset(out, ds);
  const auto test = ds.count(data::Split::test);
  std::printf("wrote %zu samples (%zu train, %zu test), %zu classes to %s\n", ds.samples.size(),
              ds.samples.size() - test, test, ds.num_classes, out.c_str());
  return 0;
}

int cmd_train(const KeyValues& kv, bool print_config) {
  const auto cfg = train::RunConfig::read_from(kv);
  if (print_config) {
    KeyValues shown;
    cfg.write_to(shown);
    shown.write(std::cout);
    return 0;
  }
  if (cfg.dataset.empty()) throw ConfigError("train needs data.path");
  const auto result = train::train(cfg, &std::cout);
  std::printf("best test accuracy %.4f at epoch %zu\n", result.best_accuracy, result.best_epoch);
  if (!cfg.output_dir.empty()) std::printf("checkpoint in %s\n", (cfg.output_dir / "checkpoint").c_str());
  return 0;
}

data::Dataset select_split(const data::Dataset& ds, const std::string& split) {
  if (split == "all") return ds;
  if (split == "train") return ds.subset(data::Split::train);
  if (split == "test") return ds.subset(data::Split::test);
  throw ConfigError("split must be train, test or all, got '" + split + "'");
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset, const std::string& split,
             double noise, std::uint64_t noise_seed) {
  const auto ck = nn::load_checkpoint(checkpoint);
  auto ds = select_split(data::load_dataset(dataset), split);
  if (noise > 0.0) ds = data::inject_noise(ds, noise, noise_seed);
  train::write_eval_report(std::cout, train::evaluate(ck, ds));
  return 0;
}

int cmd_gradcheck(const std::string& target, std::size_t trials, std::uint64_t seed, double h,
                  double tol, const std::string& csv) {
  check::CheckOptions opts;
  opts.h = h;
  opts.tolerance = tol;
  std::vector<check::GradCheckReport> reports;
  const std::vector<std::string> targets =
      target == "all" ? std::vector<std::string>{"tensor-op", "rdl", "cvsta", "layer", "full-model"}
                      : std::vector<std::string>{target};
  for (const auto& name : targets) {
    auto r = check::check_module(check::parse_target(name), trials, seed, opts);
    reports.insert(reports.end(), r.begin(), r.end());
  }
  check::write_reports_table(std::cout, reports);
  if (!csv.empty()) {
    std::ofstream os(csv);
    if (!os) throw ConfigError("cannot write " + csv);
    check::write_reports_csv(os, reports);
  }
  return check::all_pass(reports) ? 0 : kNumericFailure;
}

int cmd_export(const std::string& checkpoint, const std::string& dataset, const std::string& sample_id,
               std::size_t index, std::size_t layer, const std::string& prefix) {
  const auto ck = nn::load_checkpoint(checkpoint);
  const auto ds = data::load_dataset(dataset);
  const data::SkeletonSample* chosen = nullptr;
  if (!sample_id.empty()) {
    for (const auto& s : ds.samples)
      if (s.id == sample_id) chosen = &s;
    if (chosen == nullptr) throw ConfigError("no sample with id '" + sample_id + "'");
  } else {
    if (index >= ds.samples.size()) throw ConfigError("sample index out of range");
    chosen = &ds.samples[index];
  }
  const auto maps = train::export_attention(ck.model, chosen->x, layer, prefix);
  std::printf("sample %s layer %zu: maps %zux%zu written to %s_fr.csv and %s_ftv.csv\n", chosen->id.c_str(),
              layer, maps.saliency.dim(0), maps.saliency.dim(1), prefix.c_str(), prefix.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MDR-GCN skeleton action recognition toolkit"};
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> overrides;
  bool print_config = false;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config, "key=value configuration file")->check(CLI::ExistingFile);
    sub->add_option("-s,--set", overrides, "override, e.g. --set train.epochs=5 (repeatable)");
    sub->add_flag("--print-config", print_config, "print the effective configuration and exit");
  };

  std::string out;
  auto* gen = app.add_subcommand("generate", "write the synthetic skeleton dataset");
  add_config(gen);
  gen->add_option("-o,--out", out, "output directory");

  auto* tr = app.add_subcommand("train", "train a model; writes metrics.csv, run.txt, checkpoint/");
  add_config(tr);
  std::string data_path, out_dir;
  tr->add_option("-d,--data", data_path, "dataset directory (data.path)");
  tr->add_option("-o,--out", out_dir, "output directory (out.dir)");

  std::string checkpoint, split = "test";
  double noise = 0.0;
  std::uint64_t noise_seed = 99;
  auto* ev = app.add_subcommand("eval", "score a checkpoint on a dataset");
  ev->add_option("-k,--checkpoint", checkpoint, "checkpoint directory")->required();
  ev->add_option("-d,--data", data_path, "dataset directory")->required();
  ev->add_option("--split", split, "train, test or all")->capture_default_str();
  ev->add_option("--noise", noise, "zero this fraction of joint sites before scoring");
  ev->add_option("--noise-seed", noise_seed)->capture_default_str();

  std::string target = "all", csv;
  std::size_t trials = 5;
  std::uint64_t seed = 1;
  double h = 1e-5, tol = 0.0;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("-t,--target", target, "tensor-op, rdl, cvsta, layer, full-model or all")
      ->capture_default_str();
  gc->add_option("-n,--trials", trials)->capture_default_str();
  gc->add_option("--seed", seed)->capture_default_str();
  gc->add_option("--step", h, "finite-difference step")->capture_default_str();
  gc->add_option("--tol", tol, "relative tolerance (0: per-target default)");
  gc->add_option("--csv", csv, "also write every report to this CSV file");

  std::string sample_id, prefix;
  std::size_t index = 0, layer = 1;
  auto* ex = app.add_subcommand("export-attention", "write channel-averaged attention maps of one layer");
  ex->add_option("-k,--checkpoint", checkpoint, "checkpoint directory")->required();
  ex->add_option("-d,--data", data_path, "dataset directory")->required();
  ex->add_option("--sample", sample_id, "sample id");
  ex->add_option("--index", index, "sample index when --sample is absent")->capture_default_str();
  ex->add_option("-l,--layer", layer, "1-based layer")->capture_default_str();
  ex->add_option("-o,--out", prefix, "output prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigFailure;
  }

  try {
    if (gen->parsed()) return cmd_generate(gather(config, overrides), out, print_config);
    if (tr->parsed()) {
      KeyValues kv = gather(config, overrides);
      if (!data_path.empty()) kv.set("data.path", data_path);
      if (!out_dir.empty()) kv.set("out.dir", out_dir);
      return cmd_train(kv, print_config);
    }
    if (ev->parsed()) return cmd_eval(checkpoint, data_path, split, noise, noise_seed);
    if (gc->parsed()) return cmd_gradcheck(target, trials, seed, h, tol, csv);
    if (ex->parsed()) return cmd_export(checkpoint, data_path, sample_id, index, layer, prefix);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigFailure;
  }
  return 0;
}
