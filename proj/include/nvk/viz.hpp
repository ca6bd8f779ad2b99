// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "nvk/backbone.hpp"
#include "nvk/image.hpp"

namespace nvk {

/// Class-token query row of one layer's attention [heads x N x N], without
/// the class-token column, renormalized per head. Returns [heads x J].
Tensor cls_attention(const std::vector<Tensor>& attention, std::size_t layer, std::size_t cls_index = 0);

/// Runs `backbone` on a model-ready image and extracts the class-token maps
/// of `layer` (last layer when absent). Only ViT backbones carry attention
/// weights; anything else raises UnsupportedArchitecture.
Tensor cls_attention(const Backbone& backbone, const Tensor& image, std::optional<std::size_t> layer = std::nullopt);

/// Arithmetic mean over heads: [heads x J] -> [J].
Tensor mean_over_heads(const Tensor& maps);

/// Keeps the ceil(q * J) highest-scoring patches; equal scores favour the lower index.
std::vector<bool> threshold_top_q(const Tensor& map, double q = 0.2);

struct OverlayStyle {
  std::array<std::uint8_t, 3> color{255, 32, 32};
  double alpha = 0.45;
};

/// Tints the pixels of every kept patch. Patch (r, c) of a gh x gw grid covers
/// rows [r*H/gh, (r+1)*H/gh) and columns [c*W/gw, (c+1)*W/gw) of the image.
Image8 render_overlay(const Image8& image, const std::vector<bool>& mask, std::size_t grid_h, std::size_t grid_w,
                     const OverlayStyle& style = {});

/// Side-by-side heat maps, one panel per head, each `panel` pixels tall.
Image8 render_head_panels(const Tensor& head_maps, std::size_t grid_h, std::size_t grid_w, std::size_t panel = 96);

struct AttentionOverlay {
  Image8 source;
  Tensor head_maps;  // [heads x J]
  Tensor mean_map;   // [J]
  std::vector<bool> mask;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  OverlayStyle style;
};

/// Full pipeline on a source image: resize to the model input, extract the
/// maps of `layer`, threshold the mean map at `q`.
AttentionOverlay build_overlay(const Backbone& backbone, const Image8& source, std::optional<std::size_t> layer,
                               double q, const std::vector<float>& mean, const std::vector<float>& std,
                               const OverlayStyle& style = {});

/// Writes `path` (tinted source) and `<stem>_heads.png` next to it (per-head
/// strip). Returns both paths.
std::array<std::filesystem::path, 2> write_overlay(const AttentionOverlay& overlay, const std::filesystem::path& path);

}  // namespace nvk
