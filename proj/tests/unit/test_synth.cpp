#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mdr/error.hpp"
#include "mdr/synth.hpp"
#include "support.hpp"

using namespace mdr;
using namespace mdr::data;
using mdr::testing::same_bits;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mdr_test_synth_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

SynthSpec small_spec() {
  auto s = default_spec();
  s.samples_per_class = 20;
  return s;
}

bool same_dataset(const Dataset& a, const Dataset& b) {
  if (a.num_classes != b.num_classes || a.samples.size() != b.samples.size()) return false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const auto &p = a.samples[i], &q = b.samples[i];
    if (p.id != q.id || p.label != q.label || p.split != q.split || !same_bits(p.x, q.x)) return false;
  }
  return true;
}

std::size_t zero_sites(const Dataset& ds) {
  std::size_t n = 0;
  for (const auto& s : ds.samples) {
    const std::size_t t = s.x.dim(1), v = s.x.dim(2);
    for (std::size_t i = 0; i < t * v; ++i)
      n += s.x.data()[i] == 0.0 && s.x.data()[t * v + i] == 0.0 && s.x.data()[2 * t * v + i] == 0.0;
  }
  return n;
}

// Multinomial logistic regression on standardized raw coordinates, full-batch
// gradient descent. Returns test accuracy.
double linear_baseline(const Dataset& ds) {
  const auto train = ds.subset(Split::train), test = ds.subset(Split::test);
  const std::size_t f = train.samples.front().x.numel(), m = ds.num_classes;
  std::vector<double> mu(f, 0.0), sd(f, 0.0);
  for (const auto& s : train.samples)
    for (std::size_t j = 0; j < f; ++j) mu[j] += s.x.data()[j];
  for (auto& v : mu) v /= static_cast<double>(train.samples.size());
  for (const auto& s : train.samples)
    for (std::size_t j = 0; j < f; ++j) sd[j] += (s.x.data()[j] - mu[j]) * (s.x.data()[j] - mu[j]);
  for (auto& v : sd) v = std::sqrt(v / static_cast<double>(train.samples.size())) + 1e-8;

  auto features = [&](const SkeletonSample& s) {
    std::vector<double> z(f);
    for (std::size_t j = 0; j < f; ++j) z[j] = (s.x.data()[j] - mu[j]) / sd[j];
    return z;
  };
  std::vector<std::vector<double>> xs;
  for (const auto& s : train.samples) xs.push_back(features(s));

  std::vector<double> w(m * f, 0.0), b(m, 0.0);
  auto logits = [&](const std::vector<double>& z) {
    std::vector<double> out(b);
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t j = 0; j < f; ++j) out[k] += w[k * f + j] * z[j];
    return out;
  };
  const double lr = 0.5, l2 = 1e-3;
  for (int it = 0; it < 300; ++it) {
    std::vector<double> gw(m * f, 0.0), gb(m, 0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      auto p = logits(xs[i]);
      const double top = *std::max_element(p.begin(), p.end());
      double s = 0.0;
      for (auto& v : p) s += (v = std::exp(v - top));
      for (std::size_t k = 0; k < m; ++k) {
        const double g = p[k] / s - (k == train.samples[i].label ? 1.0 : 0.0);
        gb[k] += g;
        for (std::size_t j = 0; j < f; ++j) gw[k * f + j] += g * xs[i][j];
      }
    }
    const double inv = 1.0 / static_cast<double>(xs.size());
    for (std::size_t k = 0; k < m * f; ++k) w[k] -= lr * (gw[k] * inv + l2 * w[k]);
    for (std::size_t k = 0; k < m; ++k) b[k] -= lr * gb[k] * inv;
  }
  std::size_t hit = 0;
  for (const auto& s : test.samples) {
    const auto p = logits(features(s));
    hit += static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) == s.label;
  }
  return static_cast<double>(hit) / static_cast<double>(test.samples.size());
}

}  // namespace

TEST_CASE("default spec shape") {
  const auto spec = default_spec();
  CHECK(spec.num_classes() == 5);
  CHECK(spec.num_joints() == 9);
  CHECK(spec.frames == 32);
  CHECK(spec.samples_per_class == 200);
  CHECK_NOTHROW(spec.validate());
}

TEST_CASE("generation is deterministic") {
  auto spec = small_spec();
  spec.jitter = 0.0;
  const auto g = graph::toy_skeleton();
  CHECK(same_dataset(generate(spec, g), generate(spec, g)));
  spec.jitter = 0.03;
  CHECK(same_dataset(generate(spec, g), generate(spec, g)));
  auto other = spec;
  other.seed = 8;
  CHECK_FALSE(same_dataset(generate(spec, g), generate(other, g)));

  const auto ds = generate(spec, g);
  CHECK(ds.samples.size() == 100);
  CHECK(ds.frames() == 32);
  CHECK(ds.joints() == 9);
  for (const auto& s : ds.samples) {
    CHECK(s.label < 5);
    for (double v : s.x.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("spec validation") {
  auto spec = default_spec();
  spec.classes[1] = spec.classes[0];
  CHECK(class_distance(spec.classes[0], spec.classes[1]) == 0.0);
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  spec = default_spec();
  for (auto& j : spec.classes[2].joints) j.amplitude = {0, 0, 0};
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  spec = default_spec();
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = a + 1; b < 5; ++b) CHECK(class_distance(spec.classes[a], spec.classes[b]) >= spec.class_distance_floor);

  CHECK_THROWS_AS(generate(default_spec(), graph::build_graph(2, {{0, 1}}, 0)), ConfigError);

  KeyValues kv;
  kv.set("synth.frames", "16");
  kv.set("synth.seed", "3");
  const auto read = SynthSpec::read_from(kv, default_spec());
  CHECK(read.frames == 16);
  CHECK(read.seed == 3);
  CHECK(read.num_classes() == 5);
}

TEST_CASE("raw coordinates are not linearly separable") {
  const auto ds = generate(default_spec(), graph::toy_skeleton());
  const double acc = linear_baseline(ds);
  MESSAGE("linear baseline test accuracy " << acc);
  CHECK(acc < 0.8);
}

TEST_CASE("noise injection") {
  const auto ds = generate(small_spec(), graph::toy_skeleton());
  const std::size_t sites = ds.samples.size() * 32 * 9;
  REQUIRE(zero_sites(ds) == 0);

  CHECK(same_dataset(inject_noise(ds, 0.0, 1), ds));
  const auto all = inject_noise(ds, 1.0, 1);
  for (const auto& s : all.samples)
    for (double v : s.x.data()) CHECK(v == 0.0);

  const auto tenth = inject_noise(ds, 0.1, 5);
  const double rate = static_cast<double>(zero_sites(tenth)) / static_cast<double>(sites);
  CHECK(sites >= 10000);
  CHECK(std::abs(rate - 0.1) <= 0.005);
  CHECK(same_dataset(tenth, inject_noise(ds, 0.1, 5)));
  CHECK_FALSE(same_dataset(tenth, inject_noise(ds, 0.1, 6)));
  REQUIRE(tenth.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) CHECK(tenth.samples[i].label == ds.samples[i].label);

  const auto axis = inject_noise(ds, 0.1, 5, NoiseMode::axis);
  std::size_t zeros = 0;
  for (const auto& s : axis.samples)
    for (double v : s.x.data()) zeros += v == 0.0;
  CHECK(zeros == static_cast<std::size_t>(std::llround(0.1 * 3.0 * static_cast<double>(sites))));

  CHECK_THROWS_AS(inject_noise(ds, 1.5, 1), ConfigError);
  CHECK_THROWS_AS(parse_noise_mode("frame"), ConfigError);
}

TEST_CASE("split by id hash") {
  const auto ds = generate(default_spec(), graph::toy_skeleton());
  std::set<std::string> train, test;
  for (const auto& s : ds.samples) {
    CHECK(s.split == split_for_id(s.id));
    (s.split == Split::train ? train : test).insert(s.id);
  }
  for (const auto& id : test) CHECK(train.count(id) == 0);
  CHECK(train.size() + test.size() == ds.samples.size());
  const double frac = static_cast<double>(test.size()) / static_cast<double>(ds.samples.size());
  CHECK(frac > 0.15);
  CHECK(frac < 0.25);
  CHECK(ds.subset(Split::test).samples.size() == ds.count(Split::test));
  CHECK(fnv1a("") == 14695981039346656037ull);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("dataset files round trip") {
  const auto ds = generate(default_spec(), graph::toy_skeleton());
  REQUIRE(ds.samples.size() == 1000);
  const auto dir = scratch_dir("roundtrip");
  const auto start = std::chrono::steady_clock::now();
  save_dataset(dir, ds);
  const auto back = load_dataset(dir);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  MESSAGE("1000-sample save+load " << seconds << " s");
  CHECK(seconds < 1.0);
  CHECK(same_dataset(ds, back));
  CHECK(back.info.get_string("synth.seed", "") == ds.info.get_string("synth.seed", "?"));

  {
    std::fstream f(dir / "manifest.txt", std::ios::in | std::ios::out);
    f.seekp(0);
    f << "XXXXXXX";
  }
  CHECK_THROWS_AS(load_dataset(dir), FormatError);

  save_dataset(dir, ds);
  const auto victim = dir / "samples" / (ds.samples[3].id + ".mdrt");
  std::filesystem::resize_file(victim, std::filesystem::file_size(victim) - 8);
  CHECK_THROWS_AS(load_dataset(dir), FormatError);
  CHECK_THROWS_AS(load_dataset(dir / "nothing"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("CSV import") {
  const auto dir = scratch_dir("csv");
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "seq.csv");
    os << "x0,y0,z0,x1,y1,z1\n";
    for (int t = 0; t < 4; ++t) os << t << ",0.5,-1," << 10 + t << ",2,3\n";
  }
  const auto s = import_csv_sample(dir / "seq.csv", 2, 1, "user-1");
  CHECK(s.x.shape() == Shape{3, 4, 2});
  CHECK(s.x.at({0, 2, 0}) == 2.0);
  CHECK(s.x.at({0, 3, 1}) == 13.0);
  CHECK(s.x.at({2, 1, 0}) == -1.0);
  CHECK(s.label == 1);
  CHECK_THROWS_AS(import_csv_sample(dir / "seq.csv", 3, 1, "user-1"), FormatError);
  CHECK_THROWS_AS(import_csv_sample(dir / "seq.csv", 2, 1, "bad id"), FormatError);
  {
    std::ofstream os(dir / "bad.csv");
    os << "1,2,3,4,5,6\n1,2,x,4,5,6\n";
  }
  CHECK_THROWS_AS(import_csv_sample(dir / "bad.csv", 2, 0, "b"), FormatError);
  std::filesystem::remove_all(dir);
}
