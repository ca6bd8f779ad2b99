// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "nvk/checkpoint.hpp"
#include "nvk/error.hpp"
#include "nvk/model.hpp"
#include "nvk/ops.hpp"
#include "nvk/optim.hpp"

using namespace nvk;

TEST_CASE("archive encoding is exact and self-describing") {
  ParamList entries{{"a", Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6})}, {"b.scalar", Tensor::scalar(-0.5f)}};
  auto bytes = encode_archive(entries);
  // magic 4 + count 4 + (2+1+1+8+24) + (2+8+1+4)
  CHECK(bytes.size() == 4 + 4 + 36 + 15);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "NVK1");
  auto back = decode_archive(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "a");
  CHECK(back[0].tensor.shape() == Shape{2, 3});
  CHECK(back[0].tensor.at(1, 2) == 6.0f);
  CHECK(back[1].tensor.shape().empty());
  CHECK(back[1].tensor.item() == -0.5f);
  CHECK(encode_archive(back) == bytes);
}

TEST_CASE("corrupt archives are rejected") {
  ParamList entries{{"w", Tensor::from({2}, {1, 2})}};
  auto bytes = encode_archive(entries);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_archive(bad_magic), CheckpointError);
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_archive(truncated), CheckpointError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_archive(trailing), CheckpointError);
  CHECK_THROWS_AS(load_archive("/nonexistent/dir/x.nvk"), IoError);
}

TEST_CASE("assign_params enforces names and shapes") {
  ParamList target{{"w", Tensor::zeros({2, 2})}};
  CHECK_THROWS_AS(assign_params(target, ParamList{{"v", Tensor::zeros({2, 2})}}), CheckpointError);
  CHECK_THROWS_AS(assign_params(target, ParamList{{"w", Tensor::zeros({4})}}), CheckpointError);
  assign_params(target, ParamList{{"teacher.w", Tensor::full({2, 2}, 3.0f)}}, "teacher.");
  CHECK(target[0].tensor.at(1, 1) == 3.0f);
  CHECK(with_prefix(target, "s.")[0].name == "s.w");
  CHECK(find_entry(target, "w") != nullptr);
  CHECK(find_entry(target, "x") == nullptr);
}

TEST_CASE("sha256 of known strings") {
  CHECK(sha256_hex(std::string("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex(std::string("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("backbone loading falls back to teacher weights") {
  ModelConfig mc;
  mc.vit.geometry = {8, 8, 4, 3};
  mc.vit.embed_dim = 8;
  mc.vit.depth = 1;
  mc.vit.heads = 2;
  Rng r1(1), r2(2);
  auto a = make_backbone(mc, r1);
  auto b = make_backbone(mc, r2);
  load_backbone(*b, with_prefix(a->parameters(), "teacher."));
  CHECK(params_digest(a->parameters()) == params_digest(b->parameters()));
  CHECK_THROWS_AS(load_backbone(*b, ParamList{{"unrelated", Tensor::zeros({1})}}), CheckpointError);
}

TEST_CASE("adamw matches a scalar reference over several steps") {
  Tensor w = Tensor::from({1, 2}, {0.5f, -1.0f}, true);
  Tensor b = Tensor::from({2}, {0.1f, 0.2f}, true);
  AdamW opt({{"w", w}, {"b", b}});
  double rw[2] = {0.5, -1.0}, rb[2] = {0.1, 0.2};
  double mw[2] = {}, vw[2] = {}, mb[2] = {}, vb[2] = {};
  const double lr = 0.01, wd = 0.1;
  for (int t = 1; t <= 5; ++t) {
    opt.zero_grad();
    // loss = sum((w + b)^2); gradient 2(w + b) for both.
    Tensor s = ops::add(w, b);
    ops::sum(ops::mul(s, s)).backward();
    const double bc1 = 1 - std::pow(0.9, t), bc2 = 1 - std::pow(0.999, t);
    for (int k = 0; k < 2; ++k) {
      const double g = 2 * (rw[k] + rb[k]);
      mw[k] = 0.9 * mw[k] + 0.1 * g;
      vw[k] = 0.999 * vw[k] + 0.001 * g * g;
      mb[k] = mw[k];
      vb[k] = vw[k];
      rw[k] = rw[k] * (1 - lr * wd) - lr * (mw[k] / bc1) / (std::sqrt(vw[k] / bc2) + 1e-8);
      rb[k] = rb[k] - lr * (mb[k] / bc1) / (std::sqrt(vb[k] / bc2) + 1e-8);
    }
    opt.step(lr, wd);
    for (int k = 0; k < 2; ++k) {
      CHECK(w.data()[k] == doctest::Approx(rw[k]).epsilon(1e-5));
      CHECK(b.data()[k] == doctest::Approx(rb[k]).epsilon(1e-5));
    }
  }
  CHECK(opt.steps() == 5);
}

TEST_CASE("gradient clipping and state round trip") {
  Tensor w = Tensor::from({2}, {0.0f, 0.0f}, true);
  AdamW opt({{"w", w}});
  w.mutable_grad()[0] = 3.0f;
  w.mutable_grad()[1] = 4.0f;
  CHECK(opt.grad_norm() == doctest::Approx(5.0));
  CHECK(opt.clip_grad_norm(1.0) == doctest::Approx(5.0));
  CHECK(opt.grad_norm() == doctest::Approx(1.0).epsilon(1e-5));
  opt.step(0.1, 0.0);

  Tensor w2 = Tensor::from({2}, {0.0f, 0.0f}, true);
  AdamW copy({{"w", w2}});
  copy.load_state(opt.state());
  CHECK(copy.steps() == 1);
  CHECK(params_digest(copy.state()) == params_digest(opt.state()));
  AdamW other({{"v", w2}});
  CHECK_THROWS_AS(other.load_state(opt.state()), CheckpointError);
}
