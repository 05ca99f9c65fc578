#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mdr/error.hpp"
#include "mdr/serialize.hpp"
#include "mdr/train.hpp"
#include "support.hpp"

using namespace mdr;
using namespace mdr::train;
using mdr::testing::rand_tensor;
using mdr::testing::same_bits;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mdr_test_train_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

const data::Dataset& small_data() {
  static const data::Dataset ds = [] {
    auto spec = data::default_spec();
    spec.samples_per_class = 16;
    return data::generate(spec, graph::toy_skeleton());
  }();
  return ds;
}

RunConfig small_run(std::size_t epochs) {
  auto cfg = RunConfig::toy();
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  return cfg;
}

// Iterations of gradient descent on 0.5 a p^2 until |p| < 1e-6.
int bowl_iterations(double momentum) {
  Tensor p({1}, 1.0);
  OptimizerConfig oc;
  oc.lr = 1.0;
  oc.momentum = momentum;
  auto st = OptimizerState::init({p}, oc, 1);
  for (int it = 1; it < 100000; ++it) {
    sgd_step({p}, {Tensor({1}, 0.01 * p.item())}, st);
    if (std::abs(p.item()) < 1e-6) return it;
  }
  return 100000;
}

}  // namespace

TEST_CASE("sgd step") {
  std::mt19937_64 rng(1);
  Tensor p = rand_tensor({3, 2}, rng);
  const Tensor p0 = p.detach();
  const Tensor g = rand_tensor({3, 2}, rng);

  OptimizerConfig plain;
  plain.lr = 0.25;
  plain.momentum = 0.0;
  auto st = OptimizerState::init({p}, plain, 10);
  sgd_step({p}, {g}, st);
  for (std::size_t i = 0; i < 6; ++i) CHECK(p.data()[i] == p0.data()[i] - 0.25 * g.data()[i]);

  // Nesterov with mu: first step moves by lr (1 + mu) g, second uses v = mu g + g
  Tensor q = p0.detach();
  OptimizerConfig nest;
  nest.lr = 0.1;
  auto sq = OptimizerState::init({q}, nest, 10);
  sgd_step({q}, {g}, sq);
  sgd_step({q}, {g}, sq);
  for (std::size_t i = 0; i < 6; ++i) {
    const double gi = g.data()[i];
    const double expect = p0.data()[i] - 0.1 * 1.9 * gi - 0.1 * (gi + 0.9 * 1.9 * gi);
    CHECK(q.data()[i] == doctest::Approx(expect).epsilon(1e-15));
  }

  Tensor r = p0.detach();
  auto sr = OptimizerState::init({r}, nest, 10);
  for (int k = 0; k < 50; ++k) sgd_step({r}, {Tensor({3, 2}, 0.0)}, sr);
  CHECK(same_bits(r, p0));

  CHECK_THROWS_AS(sgd_step({r}, {Tensor({2, 3}, 0.0)}, sr), ShapeError);
  OptimizerConfig bad;
  bad.momentum = 1.0;
  CHECK_THROWS_AS(OptimizerState::init({r}, bad, 1), ConfigError);
}

TEST_CASE("momentum speeds up an ill-conditioned bowl") {
  const int slow = bowl_iterations(0.0), fast = bowl_iterations(0.9);
  MESSAGE("iterations to 1e-6: mu=0 " << slow << ", mu=0.9 " << fast);
  CHECK(slow == 1375);
  CHECK(fast < slow / 3);
}

TEST_CASE("gradient clipping rescales the whole step") {
  Tensor a({2}, 0.0), b({1}, 0.0);
  OptimizerConfig oc;
  oc.lr = 1.0;
  oc.momentum = 0.0;
  oc.clip_norm = 1.0;
  auto st = OptimizerState::init({a, b}, oc, 1);
  sgd_step({a, b}, {Tensor({2}, std::vector<double>{3, 0}), Tensor({1}, 4.0)}, st);
  CHECK(a.data()[0] == doctest::Approx(-0.6));
  CHECK(b.item() == doctest::Approx(-0.8));
}

TEST_CASE("learning-rate milestones") {
  OptimizerConfig oc;
  auto st = OptimizerState::init({}, oc, 10);
  CHECK(st.milestone_epochs == std::vector<std::size_t>{6, 9});
  CHECK(st.lr_at(0) == 0.1);
  CHECK(st.lr_at(5) == 0.1);
  CHECK(st.lr_at(6) == doctest::Approx(0.01));
  CHECK(st.lr_at(9) == doctest::Approx(0.001));
  oc.milestones = {1.5};
  CHECK_THROWS_AS(OptimizerState::init({}, oc, 10), ConfigError);
}

TEST_CASE("run configuration text round trip") {
  auto cfg = RunConfig::toy();
  cfg.use_rdl = false;
  cfg.rdl.lambda1 = 0.25;
  cfg.model.sigma = Activation::sigmoid;
  cfg.model.c_mid = nn::CMidRule{0, true};
  cfg.reduction = loss::Reduction::sum;
  cfg.noise_fraction = 0.1;
  cfg.optim.milestones = {0.5};
  KeyValues kv;
  cfg.write_to(kv);
  std::stringstream ss;
  kv.write(ss);
  const auto back = RunConfig::read_from(KeyValues::parse(ss));
  CHECK_FALSE(back.use_rdl);
  CHECK(back.rdl.lambda1.value_or(0) == 0.25);
  CHECK_FALSE(back.rdl.lambda2.has_value());
  CHECK(back.model.sigma == Activation::sigmoid);
  CHECK(back.model.c_mid.fixed);
  CHECK(back.reduction == loss::Reduction::sum);
  CHECK(back.noise_fraction == 0.1);
  CHECK(back.optim.milestones == std::vector<double>{0.5});
  CHECK(back.optim.lr == cfg.optim.lr);
  CHECK(back.model.channels == cfg.model.channels);

  KeyValues over;
  over.apply_override("model.sigma=hardswish");
  over.apply_override("train.epochs=3");
  const auto o = RunConfig::read_from(over);
  CHECK(o.model.sigma == Activation::hardswish);
  CHECK(o.epochs == 3);
  CHECK_THROWS_AS(over.apply_override("novalue"), ConfigError);

  auto bad = RunConfig::toy();
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("zero epochs keep the initialization") {
  auto cfg = small_run(0);
  cfg.calibrate = false;
  cfg.output_dir = scratch_dir("zero");
  const auto result = train::train(cfg, small_data());
  CHECK(result.history.empty());
  CHECK(result.best_epoch == 0);
  std::mt19937_64 master(cfg.seed);
  const auto init = nn::Model::init(cfg.model, graph::toy_skeleton(), master());
  const auto ck = nn::load_checkpoint(cfg.output_dir / "checkpoint");
  const auto a = init.named_parameters(), b = ck.model.named_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_bits(a[i].second, b[i].second));
  CHECK(slurp(cfg.output_dir / "metrics.csv") == std::string(kMetricsHeader) + "\n");
  std::filesystem::remove_all(cfg.output_dir);
}

TEST_CASE("identical runs write identical logs") {
  auto cfg = small_run(2);
  cfg.output_dir = scratch_dir("det_a");
  train::train(cfg, small_data());
  auto cfg_b = cfg;
  cfg_b.output_dir = scratch_dir("det_b");
  train::train(cfg_b, small_data());
  const std::string log = slurp(cfg.output_dir / "metrics.csv");
  CHECK(log.size() > std::string(kMetricsHeader).size() + 20);
  CHECK(log == slurp(cfg_b.output_dir / "metrics.csv"));
  CHECK(slurp(cfg.output_dir / "checkpoint" / "tensors.bin") == slurp(cfg_b.output_dir / "checkpoint" / "tensors.bin"));

  auto cfg_c = cfg;
  cfg_c.seed = 2;
  cfg_c.output_dir = scratch_dir("det_c");
  train::train(cfg_c, small_data());
  CHECK(log != slurp(cfg_c.output_dir / "metrics.csv"));
  for (const auto& d : {cfg.output_dir, cfg_b.output_dir, cfg_c.output_dir}) std::filesystem::remove_all(d);
}

TEST_CASE("training lowers the loss") {
  const auto result = train::train(small_run(10), small_data());
  REQUIRE(result.history.size() == 10);
  CHECK(result.history.back().total < result.history.front().total);
  CHECK(result.best_accuracy >= result.history.front().test_accuracy);
  for (const auto& m : result.history) {
    CHECK(std::isfinite(m.total));
    CHECK(m.lr > 0.0);
  }
  CHECK(result.history[5].lr == result.history[0].lr);
  CHECK(result.history[6].lr == doctest::Approx(0.1 * result.history[0].lr));
}

TEST_CASE("evaluation against a counting oracle") {
  const auto result = train::train(small_run(1), small_data());
  const auto test = small_data().subset(data::Split::test);
  const auto m = evaluate(result.model, result.centers.c, test);
  std::vector<std::vector<std::size_t>> confusion(5, std::vector<std::size_t>(5, 0));
  std::size_t hits = 0;
  for (const auto& s : test.samples) {
    const auto [emb, logits] = nn::model_forward(s.x, result.model);
    const auto lv = logits.data();
    const auto pred = static_cast<std::size_t>(std::max_element(lv.begin(), lv.end()) - lv.begin());
    ++confusion[s.label][pred];
    hits += pred == s.label;
  }
  CHECK(m.count == test.samples.size());
  CHECK(m.confusion == confusion);
  CHECK(m.accuracy == doctest::Approx(static_cast<double>(hits) / static_cast<double>(test.samples.size())));
  for (std::size_t j = 0; j < 5; ++j) {
    std::size_t row = 0;
    for (auto v : confusion[j]) row += v;
    if (row) CHECK(m.per_class_accuracy[j] == doctest::Approx(static_cast<double>(confusion[j][j]) / row));
    else CHECK(std::isnan(m.per_class_accuracy[j]));
  }
  CHECK(m.intra_cos_centers >= -1.0);
  CHECK(m.intra_cos_centers <= 1.0);

  data::Dataset one = test;
  one.samples.resize(1);
  const double acc = evaluate(result.model, std::nullopt, one).accuracy;
  CHECK((acc == 0.0 || acc == 1.0));
  CHECK(std::isnan(evaluate(result.model, std::nullopt, one).intra_cos_centers));

  data::Dataset wrong = test;
  wrong.num_classes = 4;
  CHECK_THROWS_AS(evaluate(result.model, std::nullopt, wrong), ConfigError);

  std::ostringstream os;
  write_eval_report(os, m);
  CHECK(os.str().find("accuracy=") != std::string::npos);
}

TEST_CASE("checkpoint reload reproduces evaluation") {
  auto cfg = small_run(1);
  cfg.output_dir = scratch_dir("reload");
  const auto result = train::train(cfg, small_data());
  const auto ck = nn::load_checkpoint(cfg.output_dir / "checkpoint");
  const auto a = evaluate(result.model, result.centers.c, small_data());
  const auto b = evaluate(ck, small_data());
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.confusion == b.confusion);
  CHECK(a.intra_cos_centers == b.intra_cos_centers);
  CHECK(ck.metadata.get_string("train.seed", "") == "1");
  std::filesystem::remove_all(cfg.output_dir);
}

TEST_CASE("attention maps") {
  const auto model = nn::Model::init(RunConfig::toy().model, graph::toy_skeleton(), 3);
  const auto dir = scratch_dir("attn");

  const Tensor flat({3, 32, 9}, 0.4);
  const auto maps = export_attention(model, flat, 1, dir / "flat");
  CHECK(maps.saliency.shape() == Shape{32, 9});
  for (double v : maps.saliency.data()) CHECK(v == doctest::Approx(maps.saliency.data()[0]).epsilon(1e-13));
  for (double v : maps.transformed.data()) CHECK(v == doctest::Approx(maps.transformed.data()[0]).epsilon(1e-13));

  // shapes follow the frame count seen by each layer
  CHECK(attention_maps(model, flat, 3).saliency.shape() == Shape{16, 9});
  CHECK(attention_maps(model, flat, 4).saliency.shape() == Shape{16, 9});
  CHECK_THROWS_AS(attention_maps(model, flat, 0), ConfigError);
  CHECK_THROWS_AS(attention_maps(model, flat, 5), ConfigError);

  {
    std::ifstream csv(dir.string() + "/flat_fr.csv");
    std::string line;
    std::size_t rows = 0, cols = 0;
    while (std::getline(csv, line)) {
      ++rows;
      cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    }
    CHECK(rows == 32);
    CHECK(cols == 9);
    CHECK(same_bits(load_tensor(dir / "flat_ftv.mdrt"), maps.transformed));
  }

  // one joint swings hard around an offset while the rest sit still at the origin
  std::mt19937_64 rng(4);
  for (std::size_t hot = 0; hot < 9; ++hot) {
    Tensor x({3, 32, 9}, 0.0);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < 32; ++t) x.at({c, t, hot}) = 0.5 + 3.0 * std::sin(0.4 * static_cast<double>(t));
    const auto m = attention_maps(model, x, 1);
    std::vector<double> mass(9, 0.0);
    for (std::size_t t = 0; t < 32; ++t)
      for (std::size_t v = 0; v < 9; ++v) mass[v] += std::abs(m.saliency.at({t, v}) * m.transformed.at({t, v}));
    std::vector<double> sorted = mass;
    std::nth_element(sorted.begin(), sorted.begin() + 4, sorted.end());
    CHECK(mass[hot] > sorted[4]);
  }
  std::filesystem::remove_all(dir);
}
