#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "mdr/error.hpp"
#include "mdr/gradcheck.hpp"
#include "mdr/ops.hpp"
#include "mdr/serialize.hpp"
#include "support.hpp"

using namespace mdr;
using mdr::testing::rand_tensor;
using mdr::testing::rel_diff;
using mdr::testing::same_bits;

TEST_CASE("construction and shape contract") {
  const Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.at({1, 2}) == 1.5);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(t.at({2, 0}), ShapeError);
  CHECK_THROWS_AS(t.item(), ShapeError);
  CHECK_FALSE(Tensor().defined());
}

TEST_CASE("ops reject non-finite results") {
  const Tensor big({1}, std::vector<double>{1e308});
  CHECK_THROWS_AS(mul(big, big), NumericError);
  const Tensor zero({1}, 0.0);
  CHECK_THROWS_AS(div(Tensor({1}, 1.0), zero), NumericError);
  CHECK_THROWS_AS(mdr::sqrt(Tensor({1}, -1.0)), DegenerateInputError);
}

TEST_CASE("matmul") {
  std::mt19937_64 rng(1);
  const Tensor b = rand_tensor({3, 4}, rng);
  CHECK(same_bits(matmul(Tensor::identity(3), b), b));
  const Tensor z = matmul(Tensor({2, 3}, 0.0), b);
  for (double v : z.data()) CHECK(v == 0.0);

  const Tensor a = rand_tensor({4, 5}, rng), c = rand_tensor({5, 2}, rng);
  const Tensor p = matmul(a, c);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += a.at({i, k}) * c.at({k, j});
      CHECK(p.at({i, j}) == doctest::Approx(s).epsilon(1e-14));
    }

  try {
    matmul(a, a);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(4,5)") != std::string::npos);
  }
}

TEST_CASE("conv1x1") {
  std::mt19937_64 rng(2);
  const Tensor x = rand_tensor({3, 4, 5}, rng);
  CHECK(same_bits(conv1x1(x, Tensor::identity(3)), x));

  const Tensor beta({2}, std::vector<double>{0.25, -2.0});
  const Tensor y = conv1x1(x, Tensor({2, 3}, 0.0), beta);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t v = 0; v < 5; ++v) {
      CHECK(y.at({0, t, v}) == 0.25);
      CHECK(y.at({1, t, v}) == -2.0);
    }

  const Tensor w = rand_tensor({6, 3}, rng);
  const Tensor ref = reshape(matmul(w, reshape(x, {3, 20})), {6, 4, 5});
  CHECK(rel_diff(conv1x1(x, w), ref) < 1e-14);
  CHECK_THROWS_AS(conv1x1(x, Tensor({2, 4}, 0.0)), ShapeError);
}

TEST_CASE("temporal_conv") {
  std::mt19937_64 rng(3);
  const Tensor x = rand_tensor({2, 7, 3}, rng);

  Tensor id({2, 2, 3}, 0.0);
  id.at({0, 0, 1}) = 1.0;
  id.at({1, 1, 1}) = 1.0;
  CHECK(same_bits(temporal_conv(x, id, 1), x));

  const Tensor avg({1, 1, 3}, 1.0 / 3.0);
  const Tensor c = temporal_conv(Tensor({1, 6, 2}, 2.0), avg, 1);
  for (std::size_t t = 1; t < 5; ++t) CHECK(c.at({0, t, 0}) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(c.at({0, 0, 0}) == doctest::Approx(4.0 / 3.0));

  for (std::size_t stride : {1u, 2u, 3u}) {
    const Tensor w = rand_tensor({4, 2, 5}, rng);
    const Tensor y = temporal_conv(x, w, stride);
    const std::size_t tout = (7 + stride - 1) / stride;
    REQUIRE(y.dim(1) == tout);
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t t = 0; t < tout; ++t)
        for (std::size_t v = 0; v < 3; ++v) {
          double s = 0.0;
          for (std::size_t c2 = 0; c2 < 2; ++c2)
            for (std::size_t j = 0; j < 5; ++j) {
              const long src = static_cast<long>(t * stride + j) - 2;
              if (src >= 0 && src < 7) s += w.at({o, c2, j}) * x.at({c2, static_cast<std::size_t>(src), v});
            }
          CHECK(y.at({o, t, v}) == doctest::Approx(s).epsilon(1e-13));
        }
  }
  CHECK_THROWS_AS(temporal_conv(x, Tensor({1, 2, 4}, 0.0)), ShapeError);
  CHECK_THROWS_AS(temporal_conv(x, Tensor({1, 2, 15}, 0.0)), ShapeError);
}

TEST_CASE("reductions") {
  const Tensor c({2, 3}, 4.0);
  const Tensor m = mean_over_axis(c, 1);
  CHECK(m.shape() == Shape{2, 1});
  CHECK(m.at({1, 0}) == 4.0);
  CHECK(mean(Tensor({3}, std::vector<double>{1, 2, 3})).item() == 2.0);
  CHECK_THROWS_AS(mean_over_axis(c, 2), ShapeError);

  std::mt19937_64 rng(4);
  Tensor x = rand_tensor({3, 4, 5}, rng).set_requires_grad(true);
  sum(mean_over_axis(x, 1)).backward();
  for (double g : x.grad()) CHECK(g == doctest::Approx(0.25).epsilon(1e-15));

  auto f = [](const Tensor& p) { return sum(mean_over_axis(p, 1)).item(); };
  for (std::size_t i = 0; i < x.numel(); i += 7)
    CHECK(check::central_difference(f, x, i, 1e-5) == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("broadcasting and its gradients") {
  std::mt19937_64 rng(5);
  Tensor a = rand_tensor({2, 3, 1}, rng).set_requires_grad(true);
  Tensor b = rand_tensor({2, 1, 4}, rng).set_requires_grad(true);
  const Tensor p = mul(a, b);
  CHECK(p.shape() == Shape{2, 3, 4});
  CHECK(p.at({1, 2, 3}) == a.at({1, 2, 0}) * b.at({1, 0, 3}));
  CHECK(same_bits(add(a, Tensor({1}, 0.0)), a));
  CHECK_THROWS_AS(add(Tensor({2, 3}, 0.0), Tensor({3, 2}, 0.0)), ShapeError);

  // Gradient of sum(w * (a*b)) w.r.t. a is sum over the broadcast axis of w*b.
  const Tensor w = rand_tensor({2, 3, 4}, rng);
  sum(mul(p, w)).backward();
  REQUIRE(a.grad().size() == 6);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t t = 0; t < 3; ++t) {
      double s = 0.0;
      for (std::size_t v = 0; v < 4; ++v) s += w.at({c, t, v}) * b.at({c, 0, v});
      CHECK(a.grad()[c * 3 + t] == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("activations") {
  CHECK(activation(Tensor({1}, 0.0), Activation::tanh).item() == 0.0);
  CHECK(activation(Tensor({1}, 0.0), Activation::sigmoid).item() == 0.5);
  CHECK(activation(Tensor({1}, -4.0), Activation::hardswish).item() == 0.0);
  CHECK(activation(Tensor({1}, 4.0), Activation::hardswish).item() == 4.0);
  CHECK(activation(Tensor({1}, -1.0), Activation::relu).item() == 0.0);
  CHECK(parse_activation("hardswish") == Activation::hardswish);
  CHECK_THROWS_AS(parse_activation("gelu"), ConfigError);
}

TEST_CASE("backward basics") {
  std::mt19937_64 rng(6);
  Tensor x = rand_tensor({4, 3}, rng).set_requires_grad(true);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);
  x.zero_grad();
  scale(sum(square(x)), 0.5).backward();
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(x.data()[i]).epsilon(1e-15));

  // accumulation until zeroed
  sum(x).backward();
  sum(x).backward();
  CHECK(x.grad()[0] == doctest::Approx(x.data()[0] + 2.0));

  CHECK_THROWS_AS(x.backward(), ShapeError);
  CHECK_THROWS_AS(sum(Tensor({2}, 1.0)).backward(), Error);
}

TEST_CASE("a node reached twice is visited once") {
  Tensor x({1}, 3.0);
  x.set_requires_grad(true);
  const Tensor y = square(x);      // 9, dy/dx = 6
  const Tensor z = add(y, y);      // shared node feeding one op twice
  mul(z, y).backward();            // 2y^2: d/dx = 4 y * 6 = 216
  CHECK(x.grad()[0] == doctest::Approx(216.0));
}

TEST_CASE("no-grad guard records nothing") {
  Tensor x({2}, 1.0);
  x.set_requires_grad(true);
  Tensor y;
  {
    NoGradGuard guard;
    y = square(x);
  }
  CHECK_FALSE(y.tracks_grad());
  CHECK(grad_mode_enabled());
}

TEST_CASE("backward is bit-reproducible") {
  std::mt19937_64 rng(7);
  const Tensor base = rand_tensor({3, 8, 5}, rng);
  const Tensor w = rand_tensor({4, 3, 3}, rng);
  auto run = [&] {
    Tensor x = base.detach().set_requires_grad(true);
    sum(square(activation(temporal_conv(x, w, 2), Activation::tanh))).backward();
    return x.grad_tensor();
  };
  CHECK(same_bits(run(), run()));
}

TEST_CASE("linearity of the linear ops") {
  std::mt19937_64 rng(8);
  const Tensor x = rand_tensor({3, 6, 4}, rng), y = rand_tensor({3, 6, 4}, rng);
  const double a = 0.7, b = -1.3;
  const Tensor mix = add(scale(x, a), scale(y, b));
  const Tensor w1 = rand_tensor({5, 3}, rng), w3 = rand_tensor({5, 3, 3}, rng), m = rand_tensor({4, 2}, rng);
  auto lin = [&](auto f) {
    const Tensor lhs = f(mix);
    const Tensor rhs = add(scale(f(x), a), scale(f(y), b));
    return rel_diff(lhs, rhs);
  };
  CHECK(lin([&](const Tensor& t) { return conv1x1(t, w1); }) < 1e-12);
  CHECK(lin([&](const Tensor& t) { return temporal_conv(t, w3, 1); }) < 1e-12);
  CHECK(lin([&](const Tensor& t) { return mean_over_axis(t, 2); }) < 1e-12);
  CHECK(lin([&](const Tensor& t) { return matmul(reshape(t, {18, 4}), m); }) < 1e-12);
}

TEST_CASE("every op passes the finite-difference check") {
  for (double h : {1e-5, 1e-6}) {
    check::CheckOptions opts;
    opts.h = h;
    const auto reports = check::check_module(check::Target::tensor_op, 3, 11, opts);
    CHECK(reports.size() >= 100);
    CHECK(check::all_pass(reports));
    CHECK(check::max_rel_err(reports) < 1e-6);
  }
}

TEST_CASE("tensor binary round trip") {
  std::mt19937_64 rng(9);
  const Tensor t = rand_tensor({2, 3, 4}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  CHECK(same_bits(read_tensor(ss), t));

  std::stringstream s32;
  write_tensor(s32, t, DType::f32);
  const Tensor r = read_tensor(s32);
  CHECK(r.shape() == t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) CHECK(r.data()[i] == static_cast<float>(t.data()[i]));

  std::stringstream header;
  write_tensor(header, t);
  const std::string bytes = header.str();
  CHECK(bytes.substr(0, 4) == "MDRT");
  CHECK(bytes.size() == 4 + 4 + 1 + 1 + 3 * 8 + 24 * 8);

  std::stringstream bad("XXXX" + bytes.substr(4));
  CHECK_THROWS_AS(read_tensor(bad), FormatError);
  std::stringstream cut(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(read_tensor(cut), FormatError);
}
