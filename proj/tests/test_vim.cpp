// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include "doctest.h"
#include "nvk/error.hpp"
#include "nvk/ops.hpp"
#include "nvk/vim.hpp"
#include "oracles.hpp"

using namespace nvk;

namespace {

VimConfig tiny_config(std::size_t size = 16, std::size_t patch = 4, std::size_t D = 8, std::size_t depth = 2) {
  VimConfig c;
  c.geometry = {size, size, patch, 3};
  c.embed_dim = D;
  c.depth = depth;
  c.state_size = 4;
  c.init_std = 0.2;
  return c;
}

Tensor random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(h * w * 3);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return Tensor::from({h, w, 3}, std::move(v));
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

/// One block written out with plain loops and the reference scan.
oracle::Matrix reference_block(const oracle::Matrix& x, const VimLayer& l) {
  const std::size_t L = x.size(), D = x[0].size(), Di = l.out_proj.dim(0);
  auto nw = oracle::to_matrix(l.norm_w)[0], nb = oracle::to_matrix(l.norm_b)[0];
  auto in = oracle::to_matrix(l.in_proj), out = oracle::to_matrix(l.out_proj);
  oracle::Matrix signal(L, std::vector<double>(Di)), gate(L, std::vector<double>(Di));
  for (std::size_t t = 0; t < L; ++t) {
    double mu = 0, var = 0;
    for (double v : x[t]) mu += v;
    mu /= D;
    for (double v : x[t]) var += (v - mu) * (v - mu);
    var /= D;
    std::vector<double> xn(D);
    for (std::size_t d = 0; d < D; ++d) xn[d] = (x[t][d] - mu) / std::sqrt(var + 1e-6) * nw[d] + nb[d];
    for (std::size_t j = 0; j < 2 * Di; ++j) {
      double s = 0;
      for (std::size_t d = 0; d < D; ++d) s += xn[d] * in[d][j];
      (j < Di ? signal[t][j] : gate[t][j - Di]) = s;
    }
  }
  auto direction = [&](const oracle::Matrix& u, const SsmDirection& dir) {
    auto dp = oracle::to_matrix(dir.dproj), bp = oracle::to_matrix(dir.bproj), cp = oracle::to_matrix(dir.cproj);
    auto db = oracle::to_matrix(dir.dbias)[0];
    auto al = oracle::to_matrix(dir.a_log);
    const std::size_t N = bp[0].size();
    oracle::Matrix delta(L, std::vector<double>(Di)), B(L, std::vector<double>(N)), C(L, std::vector<double>(N));
    oracle::Matrix A(Di, std::vector<double>(N));
    for (std::size_t c = 0; c < Di; ++c)
      for (std::size_t n = 0; n < N; ++n) A[c][n] = -std::exp(al[c][n]);
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t c = 0; c < Di; ++c) {
        double s = db[c];
        for (std::size_t k = 0; k < Di; ++k) s += u[t][k] * dp[k][c];
        delta[t][c] = std::log1p(std::exp(s));
      }
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < Di; ++k) {
          B[t][n] += u[t][k] * bp[k][n];
          C[t][n] += u[t][k] * cp[k][n];
        }
      }
    }
    return oracle::unrolled_scan(u, delta, A, B, C);
  };
  auto fwd = direction(signal, l.fwd);
  oracle::Matrix rev(signal.rbegin(), signal.rend());
  auto bwd_rev = direction(rev, l.bwd);
  oracle::Matrix y(L, std::vector<double>(D));
  for (std::size_t t = 0; t < L; ++t) {
    std::vector<double> merged(Di);
    for (std::size_t c = 0; c < Di; ++c) merged[c] = (fwd[t][c] + bwd_rev[L - 1 - t][c]) * silu(gate[t][c]);
    for (std::size_t d = 0; d < D; ++d) {
      double s = x[t][d];
      for (std::size_t c = 0; c < Di; ++c) s += merged[c] * out[c][d];
      y[t][d] = s;
    }
  }
  return y;
}

}  // namespace

TEST_CASE("class token sits in the middle of the sequence") {
  Rng rng(1);
  VisionMamba vim(tiny_config(), rng);
  CHECK(vim.config().cls_index() == 8);
  Tensor tokens = vim.patch_embed(random_image(16, 16, 2));
  CHECK(tokens.shape() == Shape{17, 8});
  const auto& p = vim.params();
  for (std::size_t d = 0; d < 8; ++d) {
    CHECK(tokens.at(8, d) == doctest::Approx(p.cls_token.data()[d] + p.pos_embed.at(8, d)));
  }
}

TEST_CASE("block matches the loop reference") {
  Rng rng(3);
  VisionMamba vim(tiny_config(8, 4, 6, 1), rng);
  Tensor x = trunc_normal_param({5, 6}, 1.0, rng);
  Tensor y = bidirectional_block(x, vim.params().layers[0]);
  auto ref = reference_block(oracle::to_matrix(x), vim.params().layers[0]);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t d = 0; d < 6; ++d) CHECK(std::abs(y.at(t, d) - ref[t][d]) < 1e-5);
}

TEST_CASE("swapping the direction weights mirrors the block") {
  Rng rng(4);
  VisionMamba vim(tiny_config(8, 4, 6, 1), rng);
  VimLayer layer = vim.params().layers[0];
  Tensor x = trunc_normal_param({7, 6}, 1.0, rng);
  Tensor y = bidirectional_block(x, layer);
  std::swap(layer.fwd, layer.bwd);
  Tensor mirrored = ops::flip(bidirectional_block(ops::flip(x, 0), layer), 0);
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y.data()[i] - mirrored.data()[i]) < 1e-5);
}

TEST_CASE("forward returns the middle token representation") {
  Rng rng(5);
  VisionMamba vim(tiny_config(), rng);
  Tensor image = random_image(16, 16, 6);
  Tensor x = vim.patch_embed(image);
  for (const auto& l : vim.params().layers) x = bidirectional_block(x, l);
  Tensor y = vim.forward(image);
  for (std::size_t d = 0; d < 8; ++d) CHECK(y.data()[d] == x.at(8, d));
  Tensor wide = vim.forward(random_image(16, 24, 7));
  CHECK(wide.numel() == 8);
}

TEST_CASE("non-finite block outputs name the layer") {
  Rng rng(6);
  VisionMamba vim(tiny_config(), rng);
  Tensor out = vim.params().layers[1].out_proj;
  out.mutable_data()[0] = std::numeric_limits<float>::infinity();
  try {
    vim.forward(random_image(16, 16, 1));
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(e.layer() == 1);
  }
}

TEST_CASE("configuration errors") {
  Rng rng(7);
  VimConfig c = tiny_config();
  c.depthwise_conv = true;
  CHECK_THROWS_AS(VisionMamba(c, rng), ConfigError);
  c = tiny_config();
  c.state_size = 0;
  CHECK_THROWS_AS(VisionMamba(c, rng), ConfigError);
}

TEST_CASE("backbone gradients match finite differences") {
  Rng rng(8);
  VimConfig c = tiny_config(8, 4, 6, 1);
  VisionMamba vim(c, rng);
  Tensor image = random_image(8, 8, 9);
  Tensor w = oracle::random_weights({6}, 10);
  auto loss = [&] { return ops::sum(ops::mul(vim.forward(image), w)); };
  Rng pick(3);
  auto res = oracle::grad_check(loss, vim.parameters(), 6, pick);
  INFO("worst tensor: " << res.worst_name);
  CHECK(res.worst_rel < 1e-2);
}

TEST_CASE("clone copies every parameter") {
  Rng rng(9);
  VisionMamba vim(tiny_config(), rng);
  auto copy = vim.clone();
  CHECK(params_digest(copy->parameters()) == params_digest(vim.parameters()));
  Tensor image = random_image(16, 16, 2);
  Tensor a = vim.forward(image), b = copy->forward(image);
  for (std::size_t d = 0; d < a.numel(); ++d) CHECK(a.data()[d] == b.data()[d]);
}
