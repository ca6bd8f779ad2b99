// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "nvk/error.hpp"
#include "nvk/ops.hpp"
#include "nvk/vit.hpp"
#include "oracles.hpp"

using namespace nvk;

namespace {

VitConfig tiny_config(std::size_t size = 16, std::size_t patch = 4, std::size_t D = 16, std::size_t depth = 2,
                      std::size_t heads = 2) {
  VitConfig c;
  c.geometry = {size, size, patch, 3};
  c.embed_dim = D;
  c.depth = depth;
  c.heads = heads;
  c.init_std = 0.2;
  return c;
}

Tensor random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(h * w * 3);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return Tensor::from({h, w, 3}, std::move(v));
}

/// Dense multi-head attention in double: x [N][D], wqkv [D][3D], wmsa [D][D].
oracle::Matrix dense_attention(const oracle::Matrix& x, const oracle::Matrix& wqkv, const oracle::Matrix& wmsa,
                               std::size_t heads) {
  const std::size_t N = x.size(), D = x[0].size(), dh = D / heads;
  oracle::Matrix qkv(N, std::vector<double>(3 * D, 0.0));
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < 3 * D; ++j)
      for (std::size_t k = 0; k < D; ++k) qkv[i][j] += x[i][k] * wqkv[k][j];
  oracle::Matrix merged(N, std::vector<double>(D, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < N; ++i) {
      std::vector<double> s(N, 0.0);
      for (std::size_t j = 0; j < N; ++j) {
        for (std::size_t c = 0; c < dh; ++c) s[j] += qkv[i][h * dh + c] * qkv[j][D + h * dh + c];
        s[j] /= std::sqrt(static_cast<double>(dh));
      }
      auto a = oracle::softmax(s);
      for (std::size_t j = 0; j < N; ++j)
        for (std::size_t c = 0; c < dh; ++c) merged[i][h * dh + c] += a[j] * qkv[j][2 * D + h * dh + c];
    }
  }
  oracle::Matrix out(N, std::vector<double>(D, 0.0));
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < D; ++j)
      for (std::size_t k = 0; k < D; ++k) out[i][j] += merged[i][k] * wmsa[k][j];
  return out;
}

}  // namespace

TEST_CASE("attention matches a dense reference") {
  Rng rng(1);
  VitLayer layer;
  layer.wqkv = trunc_normal_param({4, 12}, 0.5, rng);
  layer.wmsa = trunc_normal_param({4, 4}, 0.5, rng);
  Tensor x = trunc_normal_param({3, 4}, 1.0, rng);
  Tensor attn;
  Tensor out = multi_head_self_attention(x, layer, 2, &attn);
  auto ref = dense_attention(oracle::to_matrix(x), oracle::to_matrix(layer.wqkv), oracle::to_matrix(layer.wmsa), 2);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(out.at(i, j) - ref[i][j]) < 1e-5);
  CHECK(attn.shape() == Shape{2, 3, 3});
}

TEST_CASE("a single token attends only to itself") {
  Rng rng(2);
  VitLayer layer;
  layer.wqkv = trunc_normal_param({4, 12}, 0.5, rng);
  layer.wmsa = trunc_normal_param({4, 4}, 0.5, rng);
  Tensor x = trunc_normal_param({1, 4}, 1.0, rng);
  Tensor attn;
  multi_head_self_attention(x, layer, 2, &attn);
  for (float v : attn.data()) CHECK(v == 1.0f);
}

TEST_CASE("attention rows are distributions") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    VisionTransformer vit(tiny_config(), rng);
    auto out = vit.forward_with_attention(random_image(16, 16, seed + 100));
    REQUIRE(out.attention.size() == 2);
    for (const auto& a : out.attention) {
      const std::size_t N = a.dim(1);
      CHECK(N == 17);
      for (std::size_t r = 0; r < a.numel() / N; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < N; ++c) {
          const float v = a.data()[r * N + c];
          CHECK(v >= 0.0f);
          s += v;
        }
        CHECK(std::abs(s - 1.0) <= 1e-6);
      }
    }
  }
}

TEST_CASE("class output is invariant to a joint patch and position permutation") {
  const std::size_t size = 16, patch = 4, grid = size / patch, J = grid * grid;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    VisionTransformer vit(tiny_config(size, patch), rng);
    Tensor image = random_image(size, size, seed + 7);
    Tensor base = vit.forward(image);

    std::vector<std::size_t> perm(J);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm.begin(), perm.end(), rng);
    // Patch j moves to grid slot perm[j]; its positional row moves with it.
    std::vector<float> moved(image.numel());
    for (std::size_t j = 0; j < J; ++j) {
      const std::size_t sr = j / grid, sc = j % grid, dr = perm[j] / grid, dc = perm[j] % grid;
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x)
          for (std::size_t c = 0; c < 3; ++c)
            moved[((dr * patch + y) * size + dc * patch + x) * 3 + c] =
                image.data()[((sr * patch + y) * size + sc * patch + x) * 3 + c];
    }
    Tensor pos = vit.params().pos_embed;
    std::vector<float> old(pos.data().begin(), pos.data().end());
    const std::size_t D = pos.dim(1);
    for (std::size_t j = 0; j < J; ++j)
      std::copy_n(old.begin() + (1 + j) * D, D, pos.mutable_data().begin() + (1 + perm[j]) * D);
    Tensor permuted = vit.forward(Tensor::from({size, size, 3}, moved));
    for (std::size_t d = 0; d < D; ++d) CHECK(std::abs(permuted.data()[d] - base.data()[d]) <= 1e-5);
  }
}

TEST_CASE("depth zero returns the normalized class embedding") {
  Rng rng(4);
  VisionTransformer vit(tiny_config(16, 4, 16, 0), rng);
  Tensor out = vit.forward(random_image(16, 16, 1));
  const auto& p = vit.params();
  Tensor expect = ops::layer_norm(ops::reshape(ops::add(p.cls_token, ops::reshape(ops::slice(p.pos_embed, 0, 0, 1), {16})), {1, 16}),
                                  p.norm_w, p.norm_b);
  for (std::size_t d = 0; d < 16; ++d) CHECK(out.data()[d] == doctest::Approx(expect.data()[d]).epsilon(1e-6));
}

TEST_CASE("other input sizes reuse the positional table") {
  Rng rng(5);
  VisionTransformer vit(tiny_config(16, 4), rng);
  auto out = vit.forward_with_attention(random_image(24, 32, 3));
  CHECK(out.cls.numel() == 16);
  CHECK(out.attention[0].dim(1) == 6 * 8 + 1);
  // Same size resampling is the identity.
  Tensor eye = grid_resample_matrix(4, 4, 4, 4);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) CHECK(eye.at(i, j) == doctest::Approx(i == j ? 1.0 : 0.0));
}

TEST_CASE("configuration and input errors") {
  Rng rng(6);
  CHECK_THROWS_AS(VisionTransformer(tiny_config(16, 4, 15, 2, 2), rng), ConfigError);
  CHECK_THROWS_AS(VisionTransformer(tiny_config(18, 4), rng), ConfigError);
  VisionTransformer vit(tiny_config(), rng);
  CHECK_THROWS_AS(vit.forward(Tensor::zeros({16, 16, 1})), ConfigError);
}

TEST_CASE("backbone gradients match finite differences") {
  Rng rng(8);
  VitConfig c = tiny_config(8, 4, 8, 1, 2);
  VisionTransformer vit(c, rng);
  Tensor image = random_image(8, 8, 9);
  Tensor w = oracle::random_weights({8}, 10);
  auto loss = [&] { return ops::sum(ops::mul(vit.forward(image), w)); };
  Rng pick(3);
  auto res = oracle::grad_check(loss, vit.parameters(), 6, pick);
  INFO("worst tensor: " << res.worst_name);
  CHECK(res.worst_rel < 1e-2);
}

TEST_CASE("parameters round trip through an archive") {
  Rng rng(9);
  VisionTransformer a(tiny_config(), rng);
  auto path = std::filesystem::temp_directory_path() / "nvk_vit_roundtrip.nvk";
  save_archive(path, a.parameters());
  Rng other(10);
  VisionTransformer b(tiny_config(), other);
  ParamList target = b.parameters();
  assign_params(target, load_archive(path));
  CHECK(params_digest(a.parameters()) == params_digest(b.parameters()));
  Tensor image = random_image(16, 16, 11);
  Tensor ya = a.forward(image), yb = b.forward(image);
  for (std::size_t d = 0; d < ya.numel(); ++d) CHECK(ya.data()[d] == yb.data()[d]);
  auto copy = a.clone();
  CHECK(params_digest(copy->parameters()) == params_digest(a.parameters()));
  std::filesystem::remove(path);
}
