// SPDX-License-Identifier: Apache-2.0
#include "nvk/vit.hpp"

#include <cmath>

#include "nvk/error.hpp"
#include "nvk/ops.hpp"

namespace nvk {

void VitConfig::validate() const {
  geometry.validate();
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " must be a positive multiple of heads " +
                      std::to_string(heads));
  }
  if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
}

Tensor multi_head_self_attention(const Tensor& x, const VitLayer& layer, std::size_t heads, Tensor* attention) {
  if (x.rank() != 2) throw DimensionError("attention input must be [N x D], got " + to_string(x.shape()));
  const std::size_t N = x.dim(0), D = x.dim(1);
  if (layer.wqkv.dim(0) != D || layer.wqkv.dim(1) != 3 * D) {
    throw DimensionError("wqkv " + to_string(layer.wqkv.shape()) + " does not fit tokens " + to_string(x.shape()));
  }
  const std::size_t dh = D / heads;
  const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
  Tensor qkv = ops::matmul(x, layer.wqkv);
  std::vector<Tensor> head_outputs;
  std::vector<float> weights;
  if (attention) weights.reserve(heads * N * N);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor q = ops::slice(qkv, 1, h * dh, (h + 1) * dh);
    Tensor k = ops::slice(qkv, 1, D + h * dh, D + (h + 1) * dh);
    Tensor v = ops::slice(qkv, 1, 2 * D + h * dh, 2 * D + (h + 1) * dh);
    Tensor scores = ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt_dh);
    Tensor a = ops::softmax(scores, -1);
    if (attention) weights.insert(weights.end(), a.data().begin(), a.data().end());
    head_outputs.push_back(ops::matmul(a, v));
  }
  if (attention) *attention = Tensor::from({heads, N, N}, std::move(weights));
  Tensor merged = heads == 1 ? head_outputs[0] : ops::concat(head_outputs, 1);
  return ops::matmul(merged, layer.wmsa);
}

VisionTransformer::VisionTransformer(VitConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  const auto& g = config_.geometry;
  const std::size_t D = config_.embed_dim;
  const std::size_t hidden = config_.mlp_ratio * D;
  const double std = config_.init_std;
  params_.patch_proj = trunc_normal_param({g.patch * g.patch * g.channels, D}, std, rng);
  params_.pos_embed = trunc_normal_param({config_.tokens(), D}, std, rng);
  params_.cls_token = trunc_normal_param({D}, std, rng);
  for (std::size_t i = 0; i < config_.depth; ++i) {
    VitLayer l;
    l.norm1_w = constant_param({D}, 1.0f);
    l.norm1_b = constant_param({D}, 0.0f);
    l.wqkv = trunc_normal_param({D, 3 * D}, std, rng);
    l.wmsa = trunc_normal_param({D, D}, std, rng);
    l.norm2_w = constant_param({D}, 1.0f);
    l.norm2_b = constant_param({D}, 0.0f);
    l.mlp1_w = trunc_normal_param({D, hidden}, std, rng);
    l.mlp1_b = constant_param({hidden}, 0.0f);
    l.mlp2_w = trunc_normal_param({hidden, D}, std, rng);
    l.mlp2_b = constant_param({D}, 0.0f);
    params_.layers.push_back(std::move(l));
  }
  params_.norm_w = constant_param({D}, 1.0f);
  params_.norm_b = constant_param({D}, 0.0f);
}

Tensor VisionTransformer::patch_embed(const Tensor& image) const {
  const auto& g = config_.geometry;
  if (image.rank() != 3 || image.dim(2) != g.channels) {
    throw ConfigError("expected an [H x W x " + std::to_string(g.channels) + "] image, got " +
                      to_string(image.shape()));
  }
  const std::size_t D = config_.embed_dim;
  Tensor patches = ops::matmul(ops::extract_patches(image, g.patch), params_.patch_proj);
  Tensor tokens = ops::concat({ops::reshape(params_.cls_token, {1, D}), patches}, 0);
  const std::size_t gh = image.dim(0) / g.patch, gw = image.dim(1) / g.patch;
  Tensor pos = params_.pos_embed;
  if (gh != g.grid_h() || gw != g.grid_w()) {
    Tensor cls_pos = ops::slice(pos, 0, 0, 1);
    Tensor grid_pos = ops::slice(pos, 0, 1, config_.tokens());
    Tensor resampled = ops::matmul(grid_resample_matrix(g.grid_h(), g.grid_w(), gh, gw), grid_pos);
    pos = ops::concat({cls_pos, resampled}, 0);
  }
  return ops::add(tokens, pos);
}

VitOutput VisionTransformer::run(const Tensor& image, bool keep_attention) const {
  VitOutput out;
  Tensor x = patch_embed(image);
  for (const auto& l : params_.layers) {
    Tensor attn;
    Tensor h = ops::add(x, multi_head_self_attention(ops::layer_norm(x, l.norm1_w, l.norm1_b), l, config_.heads,
                                                     keep_attention ? &attn : nullptr));
    Tensor m = ops::layer_norm(h, l.norm2_w, l.norm2_b);
    m = ops::gelu(ops::add(ops::matmul(m, l.mlp1_w), l.mlp1_b));
    m = ops::add(ops::matmul(m, l.mlp2_w), l.mlp2_b);
    x = ops::add(h, m);
    if (keep_attention) out.attention.push_back(attn);
  }
  Tensor cls = ops::slice(x, 0, 0, 1);
  out.cls = ops::reshape(ops::layer_norm(cls, params_.norm_w, params_.norm_b), {config_.embed_dim});
  return out;
}

Tensor VisionTransformer::forward(const Tensor& image) const { return run(image, false).cls; }

VitOutput VisionTransformer::forward_with_attention(const Tensor& image) const { return run(image, true); }

ParamList VisionTransformer::parameters() const {
  ParamList p;
  p.push_back({"vit.patch_proj", params_.patch_proj});
  p.push_back({"vit.pos", params_.pos_embed});
  p.push_back({"vit.cls", params_.cls_token});
  for (std::size_t i = 0; i < params_.layers.size(); ++i) {
    const auto& l = params_.layers[i];
    const std::string pre = "vit.layer" + std::to_string(i) + ".";
    p.push_back({pre + "norm1", l.norm1_w});
    p.push_back({pre + "norm1.b", l.norm1_b});
    p.push_back({pre + "wqkv", l.wqkv});
    p.push_back({pre + "wmsa", l.wmsa});
    p.push_back({pre + "norm2", l.norm2_w});
    p.push_back({pre + "norm2.b", l.norm2_b});
    p.push_back({pre + "mlp1", l.mlp1_w});
    p.push_back({pre + "mlp1.b", l.mlp1_b});
    p.push_back({pre + "mlp2", l.mlp2_w});
    p.push_back({pre + "mlp2.b", l.mlp2_b});
  }
  p.push_back({"vit.norm", params_.norm_w});
  p.push_back({"vit.norm.b", params_.norm_b});
  return p;
}

std::unique_ptr<Backbone> VisionTransformer::clone() const {
  Rng rng(0);
  auto copy = std::make_unique<VisionTransformer>(config_, rng);
  copy_parameters(*this, *copy);
  return copy;
}

}  // namespace nvk
