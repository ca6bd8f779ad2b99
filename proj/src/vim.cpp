// SPDX-License-Identifier: Apache-2.0
#include "nvk/vim.hpp"

#include <cmath>

#include "nvk/error.hpp"
#include "nvk/ops.hpp"

namespace nvk {

void VimConfig::validate() const {
  geometry.validate();
  if (embed_dim == 0 || state_size == 0 || expand == 0) {
    throw ConfigError("vim embed_dim, state_size and expand must be positive");
  }
  if (depthwise_conv) throw ConfigError("vim depthwise_conv is not supported; the block has no convolution");
}

ssm::SelectiveParams selective_params(const Tensor& signal, const SsmDirection& dir) {
  ssm::SelectiveParams p;
  p.delta = ops::softplus(ops::add(ops::matmul(signal, dir.dproj), dir.dbias));
  p.A = ops::neg(ops::exp(dir.a_log));
  p.B = ops::matmul(signal, dir.bproj);
  p.C = ops::matmul(signal, dir.cproj);
  return p;
}

Tensor bidirectional_block(const Tensor& x, const VimLayer& layer) {
  const std::size_t Di = layer.out_proj.dim(0);
  Tensor xn = ops::layer_norm(x, layer.norm_w, layer.norm_b);
  Tensor proj = ops::matmul(xn, layer.in_proj);
  Tensor signal = ops::slice(proj, 1, 0, Di);
  Tensor gate = ops::slice(proj, 1, Di, 2 * Di);

  Tensor y_fwd = ssm::selective_scan(signal, selective_params(signal, layer.fwd));
  Tensor reversed = ops::flip(signal, 0);
  Tensor y_bwd = ops::flip(ssm::selective_scan(reversed, selective_params(reversed, layer.bwd)), 0);

  Tensor y = ops::mul(ops::add(y_fwd, y_bwd), ops::silu(gate));
  return ops::add(x, ops::matmul(y, layer.out_proj));
}

namespace {

SsmDirection init_direction(std::size_t Di, std::size_t N, double std, Rng& rng) {
  SsmDirection d;
  // A_n = -(n + 1) per channel, the usual S4D-real initialisation.
  std::vector<float> a_log(Di * N);
  for (std::size_t c = 0; c < Di; ++c)
    for (std::size_t n = 0; n < N; ++n) a_log[c * N + n] = std::log(static_cast<float>(n + 1));
  d.a_log = Tensor::from({Di, N}, std::move(a_log), true);
  d.dproj = trunc_normal_param({Di, Di}, std, rng);
  // Step sizes start log-uniform in [1e-3, 1e-1]; store softplus^-1 as the bias.
  std::vector<float> bias(Di);
  for (auto& b : bias) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    b = static_cast<float>(dt + std::log(-std::expm1(-dt)));
  }
  d.dbias = Tensor::from({Di}, std::move(bias), true);
  d.bproj = trunc_normal_param({Di, N}, std, rng);
  d.cproj = trunc_normal_param({Di, N}, std, rng);
  return d;
}

bool all_finite(const Tensor& t) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

VisionMamba::VisionMamba(VimConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  const auto& g = config_.geometry;
  const std::size_t D = config_.embed_dim, Di = config_.inner_dim(), N = config_.state_size;
  const double std = config_.init_std;
  params_.patch_proj = trunc_normal_param({g.patch * g.patch * g.channels, D}, std, rng);
  params_.pos_embed = trunc_normal_param({config_.tokens(), D}, std, rng);
  params_.cls_token = trunc_normal_param({D}, std, rng);
  for (std::size_t i = 0; i < config_.depth; ++i) {
    VimLayer l;
    l.norm_w = constant_param({D}, 1.0f);
    l.norm_b = constant_param({D}, 0.0f);
    l.in_proj = trunc_normal_param({D, 2 * Di}, std, rng);
    l.out_proj = trunc_normal_param({Di, D}, std, rng);
    l.fwd = init_direction(Di, N, std, rng);
    l.bwd = init_direction(Di, N, std, rng);
    params_.layers.push_back(std::move(l));
  }
}

Tensor VisionMamba::patch_embed(const Tensor& image) const {
  const auto& g = config_.geometry;
  if (image.rank() != 3 || image.dim(2) != g.channels) {
    throw ConfigError("expected an [H x W x " + std::to_string(g.channels) + "] image, got " +
                      to_string(image.shape()));
  }
  const std::size_t D = config_.embed_dim;
  Tensor patches = ops::matmul(ops::extract_patches(image, g.patch), params_.patch_proj);
  const std::size_t J = patches.dim(0);
  const std::size_t mid = J / 2;
  Tensor cls = ops::reshape(params_.cls_token, {1, D});
  std::vector<Tensor> parts;
  if (mid > 0) parts.push_back(ops::slice(patches, 0, 0, mid));
  parts.push_back(cls);
  parts.push_back(ops::slice(patches, 0, mid, J));
  Tensor tokens = ops::concat(parts, 0);

  Tensor pos = params_.pos_embed;
  const std::size_t gh = image.dim(0) / g.patch, gw = image.dim(1) / g.patch;
  if (gh != g.grid_h() || gw != g.grid_w()) {
    // Pull the patch rows out of the stored table, resample them on the new
    // grid and put the class row back in the middle of the new sequence.
    const std::size_t stored_mid = config_.cls_index();
    const std::size_t stored_tokens = config_.tokens();
    std::vector<Tensor> grid_rows;
    if (stored_mid > 0) grid_rows.push_back(ops::slice(pos, 0, 0, stored_mid));
    grid_rows.push_back(ops::slice(pos, 0, stored_mid + 1, stored_tokens));
    Tensor grid_pos = grid_rows.size() == 1 ? grid_rows[0] : ops::concat(grid_rows, 0);
    Tensor cls_pos = ops::slice(pos, 0, stored_mid, stored_mid + 1);
    Tensor resampled = ops::matmul(grid_resample_matrix(g.grid_h(), g.grid_w(), gh, gw), grid_pos);
    std::vector<Tensor> seq;
    if (mid > 0) seq.push_back(ops::slice(resampled, 0, 0, mid));
    seq.push_back(cls_pos);
    seq.push_back(ops::slice(resampled, 0, mid, J));
    pos = ops::concat(seq, 0);
  }
  return ops::add(tokens, pos);
}

Tensor VisionMamba::forward(const Tensor& image) const {
  Tensor x = patch_embed(image);
  const std::size_t mid = (x.dim(0) - 1) / 2;
  for (std::size_t i = 0; i < params_.layers.size(); ++i) {
    x = bidirectional_block(x, params_.layers[i]);
    if (config_.nan_guard && !all_finite(x)) throw NonFiniteError("vim block output", static_cast<int>(i));
  }
  return ops::reshape(ops::slice(x, 0, mid, mid + 1), {config_.embed_dim});
}

ParamList VisionMamba::parameters() const {
  ParamList p;
  p.push_back({"vim.patch_proj", params_.patch_proj});
  p.push_back({"vim.pos", params_.pos_embed});
  p.push_back({"vim.cls", params_.cls_token});
  for (std::size_t i = 0; i < params_.layers.size(); ++i) {
    const auto& l = params_.layers[i];
    const std::string pre = "vim.layer" + std::to_string(i) + ".";
    p.push_back({pre + "norm", l.norm_w});
    p.push_back({pre + "norm.b", l.norm_b});
    p.push_back({pre + "in", l.in_proj});
    p.push_back({pre + "out", l.out_proj});
    for (auto [suffix, dir] : {std::pair{".fwd", &l.fwd}, std::pair{".bwd", &l.bwd}}) {
      p.push_back({pre + "a_log" + suffix, dir->a_log});
      p.push_back({pre + "dproj" + suffix, dir->dproj});
      p.push_back({pre + "dbias" + suffix, dir->dbias});
      p.push_back({pre + "bproj" + suffix, dir->bproj});
      p.push_back({pre + "cproj" + suffix, dir->cproj});
    }
  }
  return p;
}

std::unique_ptr<Backbone> VisionMamba::clone() const {
  Rng rng(0);
  auto copy = std::make_unique<VisionMamba>(config_, rng);
  copy_parameters(*this, *copy);
  return copy;
}

}  // namespace nvk
