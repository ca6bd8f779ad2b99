// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "nvk/config.hpp"
#include "nvk/vim.hpp"
#include "nvk/vit.hpp"

namespace nvk {

/// Architecture choice plus the hyperparameters of both backbones; only the
/// selected one is used.
struct ModelConfig {
  Arch arch = Arch::vit;
  VitConfig vit;
  VimConfig vim;

  const PatchGeometry& geometry() const { return arch == Arch::vit ? vit.geometry : vim.geometry; }
  std::size_t embed_dim() const { return arch == Arch::vit ? vit.embed_dim : vim.embed_dim; }

  /// Reads the [model] section: arch, image_size (N or HxW), patch, channels,
  /// embed_dim, depth, heads, mlp_ratio, state_size, expand, init_std, nan_guard.
  static ModelConfig from_config(const ConfigFile& cfg);
};

std::unique_ptr<Backbone> make_backbone(const ModelConfig& config, Rng& rng);

/// Loads backbone weights from an archive. Names are looked up bare first,
/// then under the "teacher." prefix (DINO checkpoints keep the teacher for
/// downstream use), then "student.".
void load_backbone(Backbone& backbone, const ParamList& archive);

}  // namespace nvk
