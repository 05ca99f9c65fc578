#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "mdr/error.hpp"
#include "mdr/gradcheck.hpp"
#include "mdr/ops.hpp"
#include "support.hpp"

using namespace mdr;
using namespace mdr::check;
using mdr::testing::rand_tensor;

namespace {

double sum_squares(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  return s;
}

bool same_reports(const std::vector<GradCheckReport>& a, const std::vector<GradCheckReport>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].op != b[i].op || a[i].coord != b[i].coord || a[i].analytic != b[i].analytic ||
        a[i].numeric != b[i].numeric || a[i].h != b[i].h)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("relative error") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == 0.5);
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1e-13, 0.0) == doctest::Approx(0.1));
}

TEST_CASE("central differences on simple functions") {
  const Tensor ones({5}, 1.0);
  for (double h : {1e-3, 1e-5, 1e-6})
    for (std::size_t i = 0; i < 5; ++i) CHECK(central_difference(sum_squares, ones, i, h) == doctest::Approx(2.0).epsilon(1e-8));

  std::mt19937_64 rng(1);
  const Tensor a = rand_tensor({6}, rng);
  auto linear = [&](const Tensor& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < 6; ++i) s += a.data()[i] * x.data()[i];
    return s;
  };
  const Tensor x = rand_tensor({6}, rng);
  for (double h : {1e-1, 1e-4})
    for (std::size_t i = 0; i < 6; ++i) CHECK(central_difference(linear, x, i, h) == doctest::Approx(a.data()[i]).epsilon(1e-9));

  // non-finite evaluations surface as errors
  auto blowup = [](const Tensor& t) { return t.data()[0] > 0 ? 1.0 / 0.0 : 0.0; };
  CHECK_THROWS_AS(central_difference(blowup, Tensor({1}, 0.0), 0, 1e-5), NumericError);
}

TEST_CASE("step shrinks around a kink") {
  auto f = [](const Tensor& x) { return activation(x, Activation::relu).item() + 0.0; };
  double used = 0.0;
  // kink at 0 sits inside [x - h, x + h] for x = 3e-6, h = 1e-5
  const double d = central_difference(f, Tensor({1}, 3e-6), 0, 1e-5, &used);
  CHECK(used == doctest::Approx(1e-6));
  CHECK(d == doctest::Approx(1.0));
  central_difference(f, Tensor({1}, 0.5), 0, 1e-5, &used);
  CHECK(used == 1e-5);
}

TEST_CASE("fault injection flags exactly the corrupted coordinate") {
  std::mt19937_64 rng(2);
  const Tensor w = rand_tensor({4, 5}, rng);
  const Tensor x = rand_tensor({4, 5}, rng);
  auto f = [&](const Tensor& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < 20; ++i) s += w.data()[i] * t.data()[i] * t.data()[i];
    return s;
  };
  std::vector<double> analytic(20);
  for (std::size_t i = 0; i < 20; ++i) analytic[i] = 2.0 * w.data()[i] * x.data()[i];
  std::vector<std::size_t> coords(20);
  for (std::size_t i = 0; i < 20; ++i) coords[i] = i;

  CHECK(all_pass(check_gradient("quad", f, x, analytic, coords, 1e-5, 1e-6)));
  analytic[13] += 1e-3;
  const auto reports = check_gradient("quad", f, x, analytic, coords, 1e-5, 1e-6);
  for (const auto& r : reports) CHECK(r.pass == (r.coord != 13));
  CHECK_FALSE(all_pass(reports));
  CHECK(max_rel_err(reports) > 1e-4);

  std::ostringstream csv, table;
  write_reports_csv(csv, reports);
  write_reports_table(table, reports);
  CHECK(csv.str().rfind("op,coord,analytic,numeric,rel_err,pass,h\n", 0) == 0);
  CHECK(table.str().find("quad") != std::string::npos);
}

TEST_CASE("targets") {
  for (auto name : {"tensor-op", "rdl", "cvsta", "layer", "full-model"}) CHECK(to_string(parse_target(name)) == name);
  CHECK_THROWS_AS(parse_target("everything"), ConfigError);
  CHECK(default_tolerance(Target::rdl) == 1e-6);
  CHECK(default_tolerance(Target::full_model) == 1e-4);
}

TEST_CASE("reports are deterministic under the seed") {
  CHECK(same_reports(check_module(Target::rdl, 2, 4), check_module(Target::rdl, 2, 4)));
  CHECK(same_reports(check_module(Target::layer, 1, 4), check_module(Target::layer, 1, 4)));
  CHECK_FALSE(same_reports(check_module(Target::rdl, 1, 4), check_module(Target::rdl, 1, 5)));
}

TEST_CASE("module checks pass at both step sizes") {
  for (double h : {1e-5, 1e-6}) {
    CheckOptions opts;
    opts.h = h;
    for (auto t : {Target::tensor_op, Target::rdl, Target::cvsta, Target::layer}) {
      const auto reports = check_module(t, 1, 21, opts);
      INFO(to_string(t) << " h=" << h << " worst " << max_rel_err(reports));
      CHECK(reports.size() >= 100);
      CHECK(all_pass(reports));
    }
  }
}

TEST_CASE("tiny network passes at the default step") {
  const auto reports = check_module(Target::full_model, 1, 1);
  INFO("worst " << max_rel_err(reports));
  CHECK(reports.size() >= 50);
  CHECK(all_pass(reports));
}
