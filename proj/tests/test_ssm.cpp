// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "nvk/error.hpp"
#include "nvk/ops.hpp"
#include "nvk/ssm.hpp"
#include "oracles.hpp"

using namespace nvk;

namespace {

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi, bool grad = false) {
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor::from(std::move(shape), std::move(v), grad);
}

ssm::SelectiveParams random_params(std::size_t L, std::size_t Di, std::size_t N, Rng& rng, bool grad = false) {
  return {uniform_tensor({L, Di}, rng, 0.05, 1.0, grad), uniform_tensor({Di, N}, rng, -2.0, -0.1, grad),
          uniform_tensor({L, N}, rng, -1.0, 1.0, grad), uniform_tensor({L, N}, rng, -1.0, 1.0, grad)};
}

}  // namespace

TEST_CASE("zoh discretization closed form and limits") {
  CHECK_THROWS_AS(ssm::zoh_discretize(-1.0f, 1.0f, 0.0f), PreconditionError);
  CHECK_THROWS_AS(ssm::zoh_discretize(-1.0f, 1.0f, -0.5f), PreconditionError);

  const float ln2 = std::log(2.0f);
  auto d = ssm::zoh_discretize(-1.0f, 1.0f, ln2);
  CHECK(d.a_bar == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(d.b_bar == doctest::Approx(0.5).epsilon(1e-6));

  auto zero_a = ssm::zoh_discretize(0.0f, 3.0f, 0.25f);
  CHECK(zero_a.a_bar == 1.0f);
  CHECK(zero_a.b_bar == doctest::Approx(0.75));

  auto tiny = ssm::zoh_discretize(-1.0f, 1.0f, 1e-7f);
  CHECK(tiny.a_bar == doctest::Approx(1.0));
  CHECK(tiny.b_bar == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("series and closed form agree across the switch point") {
  for (float a : {-1.0f, 1.0f}) {
    const float below = 0.999e-4f, above = 1.001e-4f;
    auto lo = ssm::zoh_discretize(a, 1.0f, below);
    auto hi = ssm::zoh_discretize(a, 1.0f, above);
    CHECK(lo.b_bar / below == doctest::Approx(hi.b_bar / above).epsilon(1e-6));
  }
}

TEST_CASE("zoh discretization matches numerical integration of the continuous system") {
  Rng rng(7);
  for (int i = 0; i < 10; ++i) {
    const double a = rng.uniform(-3.0, 0.5), b = rng.uniform(-2.0, 2.0), delta = rng.uniform(0.01, 1.5);
    auto [a_ref, b_ref] = oracle::integrate_zoh(a, b, delta);
    auto d = ssm::zoh_discretize(static_cast<float>(a), static_cast<float>(b), static_cast<float>(delta));
    CHECK(std::abs(d.a_bar - a_ref) < 1e-4);
    CHECK(std::abs(d.b_bar - b_ref) < 1e-4);
  }
}

TEST_CASE("tensor form is elementwise") {
  Tensor A = Tensor::from({2}, {-1.0f, 0.0f}), B = Tensor::from({2}, {1.0f, 2.0f});
  Tensor delta = Tensor::from({2}, {std::log(2.0f), 0.5f});
  auto [a_bar, b_bar] = ssm::zoh_discretize(A, B, delta);
  CHECK(a_bar.at(0) == doctest::Approx(0.5));
  CHECK(a_bar.at(1) == 1.0f);
  CHECK(b_bar.at(1) == doctest::Approx(1.0));
  CHECK_THROWS_AS(ssm::zoh_discretize(A, B, Tensor::from({1}, {1.0f})), DimensionError);
}

TEST_CASE("first step and accumulator cases") {
  Rng rng(3);
  auto p = random_params(1, 3, 2, rng);
  Tensor u = uniform_tensor({1, 3}, rng, -1, 1);
  Tensor y = ssm::selective_scan(u, p);
  for (std::size_t d = 0; d < 3; ++d) {
    double expect = 0;
    for (std::size_t n = 0; n < 2; ++n) {
      auto z = ssm::zoh_discretize(p.A.at(d, n), p.B.at(0, n), p.delta.at(0, d));
      expect += p.C.at(0, n) * z.b_bar * u.at(0, d);
    }
    CHECK(y.at(0, d) == doctest::Approx(expect).epsilon(1e-6));
  }

  // A = 0 gives a_bar = 1 and b_bar = delta * B; with delta = B = C = 1 the scan is a prefix sum.
  const std::size_t L = 6;
  ssm::SelectiveParams acc{Tensor::full({L, 1}, 1.0f), Tensor::zeros({1, 1}), Tensor::full({L, 1}, 1.0f),
                           Tensor::full({L, 1}, 1.0f)};
  Tensor seq = Tensor::from({L, 1}, {1, 2, 3, 4, 5, 6});
  Tensor sums = ssm::selective_scan(seq, acc);
  const float expect[] = {1, 3, 6, 10, 15, 21};
  for (std::size_t t = 0; t < L; ++t) CHECK(sums.at(t) == doctest::Approx(expect[t]));
}

TEST_CASE("selective scan equals the unrolled recurrence") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t L = 1 + rng.below(16), Di = 1 + rng.below(4), N = 1 + rng.below(4);
    auto p = random_params(L, Di, N, rng);
    Tensor u = uniform_tensor({L, Di}, rng, -1, 1);
    Tensor y = ssm::selective_scan(u, p);
    auto ref = oracle::unrolled_scan(oracle::to_matrix(u), oracle::to_matrix(p.delta), oracle::to_matrix(p.A),
                                     oracle::to_matrix(p.B), oracle::to_matrix(p.C));
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t d = 0; d < Di; ++d) CHECK(std::abs(y.at(t, d) - ref[t][d]) < 1e-5);
    }
  }
}

TEST_CASE("selective scan gradients match finite differences") {
  Rng rng(5);
  for (std::size_t L : {3u, 9u}) {
    auto p = random_params(L, 3, 2, rng, true);
    Tensor u = uniform_tensor({L, 3}, rng, -1, 1, true);
    Tensor w = oracle::random_weights({L, 3}, 99);
    auto loss = [&] { return ops::sum(ops::mul(ssm::selective_scan(u, p), w)); };
    Rng pick(1);
    auto res = oracle::grad_check(loss, {{"u", u}, {"delta", p.delta}, {"A", p.A}, {"B", p.B}, {"C", p.C}}, 16, pick,
                                  1e-3);
    INFO("worst tensor: " << res.worst_name);
    CHECK(res.worst_rel < 1e-2);
  }
}

TEST_CASE("hidden state stays bounded over long random sequences") {
  Rng rng(17);
  const std::size_t L = 10000;
  auto p = random_params(L, 2, 4, rng);
  Tensor u = uniform_tensor({L, 2}, rng, -1, 1);
  Tensor y = ssm::selective_scan(u, p);
  for (float v : y.data()) REQUIRE(std::isfinite(v));
}

TEST_CASE("shape errors") {
  Rng rng(2);
  auto p = random_params(4, 2, 3, rng);
  CHECK_THROWS_AS(ssm::selective_scan(Tensor::zeros({4, 3}), p), DimensionError);
  CHECK_THROWS_AS(ssm::selective_scan(Tensor::zeros({5, 2}), p), DimensionError);
}
