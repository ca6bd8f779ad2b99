// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "nvk/backbone.hpp"

namespace nvk {

struct VitConfig {
  PatchGeometry geometry;
  std::size_t embed_dim = 384;
  std::size_t depth = 12;
  std::size_t heads = 6;
  std::size_t mlp_ratio = 4;
  double init_std = 0.02;

  std::size_t head_dim() const { return embed_dim / heads; }
  /// Patch tokens plus the class token.
  std::size_t tokens() const { return geometry.num_patches() + 1; }
  void validate() const;
};

struct VitLayer {
  Tensor norm1_w, norm1_b;
  Tensor wqkv;  // [D x 3D]: q | k | v blocks, head h owns columns [h*Dh, (h+1)*Dh) of each block
  Tensor wmsa;  // [D x D]
  Tensor norm2_w, norm2_b;
  Tensor mlp1_w, mlp1_b;  // [D x mlp_ratio*D]
  Tensor mlp2_w, mlp2_b;  // [mlp_ratio*D x D]
};

struct VitParams {
  Tensor patch_proj;  // [P*P*C x D]
  Tensor pos_embed;   // [(J+1) x D], row 0 belongs to the class token
  Tensor cls_token;   // [D]
  std::vector<VitLayer> layers;
  Tensor norm_w, norm_b;
};

struct VitOutput {
  Tensor cls;                      // [D]
  std::vector<Tensor> attention;   // per layer, [heads x N x N], detached
};

/// Scaled dot-product multi-head self-attention over a token matrix [N x D]. When
/// `attention` is non-null the softmax weights of every head are written to it
/// as a detached [heads x N x N] tensor.
Tensor multi_head_self_attention(const Tensor& x, const VitLayer& layer, std::size_t heads,
                                 Tensor* attention = nullptr);

class VisionTransformer final : public Backbone {
 public:
  VisionTransformer(VitConfig config, Rng& rng);

  Arch arch() const override { return Arch::vit; }
  std::size_t embed_dim() const override { return config_.embed_dim; }
  const PatchGeometry& geometry() const override { return config_.geometry; }
  Tensor forward(const Tensor& image) const override;
  ParamList parameters() const override;
  std::unique_ptr<Backbone> clone() const override;

  /// Class-token representation plus every layer's attention weights.
  VitOutput forward_with_attention(const Tensor& image) const;
  /// Embedded token matrix [(J+1) x D] with the class token in row 0 and
  /// positional rows added. Inputs of another size reuse the positional
  /// table through bilinear resampling.
  Tensor patch_embed(const Tensor& image) const;

  const VitConfig& config() const { return config_; }
  VitParams& params() { return params_; }
  const VitParams& params() const { return params_; }

 private:
  VitOutput run(const Tensor& image, bool keep_attention) const;

  VitConfig config_;
  VitParams params_;
};

}  // namespace nvk
