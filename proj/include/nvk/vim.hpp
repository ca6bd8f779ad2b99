// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "nvk/backbone.hpp"
#include "nvk/ssm.hpp"

namespace nvk {

struct VimConfig {
  PatchGeometry geometry;
  std::size_t embed_dim = 384;
  std::size_t depth = 24;
  std::size_t state_size = 16;
  std::size_t expand = 2;
  double init_std = 0.02;
  /// Abort the forward pass with NonFiniteError when a block emits NaN/Inf.
  bool nan_guard = true;
  /// Short depthwise convolution before the scans. Not part of this block
  /// design; kept as an explicit switch that must stay off.
  bool depthwise_conv = false;

  std::size_t inner_dim() const { return expand * embed_dim; }
  std::size_t tokens() const { return geometry.num_patches() + 1; }
  /// The class token sits in the middle of the patch sequence.
  std::size_t cls_index() const { return geometry.num_patches() / 2; }
  void validate() const;
};

/// Parameters of one scan direction.
struct SsmDirection {
  Tensor a_log;  // [Di x N], A = -exp(a_log)
  Tensor dproj;  // [Di x Di]
  Tensor dbias;  // [Di]
  Tensor bproj;  // [Di x N]
  Tensor cproj;  // [Di x N]
};

struct VimLayer {
  Tensor norm_w, norm_b;
  Tensor in_proj;   // [D x 2Di]: signal | gate
  Tensor out_proj;  // [Di x D]
  SsmDirection fwd, bwd;
};

struct VimParams {
  Tensor patch_proj;  // [P*P*C x D]
  Tensor pos_embed;   // [(J+1) x D] in sequence order (class row at cls_index)
  Tensor cls_token;   // [D]
  std::vector<VimLayer> layers;
};

/// Input-dependent delta, B and C for one direction over a signal [L x Di].
ssm::SelectiveParams selective_params(const Tensor& signal, const SsmDirection& dir);

/// One bidirectional block over [L x D]: norm, in-projection into signal and
/// gate, forward scan plus re-reversed scan of the reversed signal, summed,
/// gated by SiLU(gate), projected out and added to the input.
Tensor bidirectional_block(const Tensor& x, const VimLayer& layer);

class VisionMamba final : public Backbone {
 public:
  VisionMamba(VimConfig config, Rng& rng);

  Arch arch() const override { return Arch::vim; }
  std::size_t embed_dim() const override { return config_.embed_dim; }
  const PatchGeometry& geometry() const override { return config_.geometry; }
  Tensor forward(const Tensor& image) const override;
  ParamList parameters() const override;
  std::unique_ptr<Backbone> clone() const override;

  /// [(J+1) x D] token sequence with the class token at floor(J/2).
  Tensor patch_embed(const Tensor& image) const;

  const VimConfig& config() const { return config_; }
  VimParams& params() { return params_; }
  const VimParams& params() const { return params_; }

 private:
  VimConfig config_;
  VimParams params_;
};

}  // namespace nvk
