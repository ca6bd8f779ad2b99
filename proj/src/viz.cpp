// SPDX-License-Identifier: Apache-2.0
#include "nvk/viz.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nvk/augment.hpp"
#include "nvk/error.hpp"
#include "nvk/vit.hpp"

namespace nvk {

Tensor cls_attention(const std::vector<Tensor>& attention, std::size_t layer, std::size_t cls_index) {
  if (layer >= attention.size()) {
    throw ContractError("layer " + std::to_string(layer) + " out of range (model has " +
                        std::to_string(attention.size()) + " layers)");
  }
  const Tensor& a = attention[layer];
  if (a.rank() != 3 || a.dim(1) != a.dim(2)) throw DimensionError("attention must be [heads x N x N], got " + to_string(a.shape()));
  const std::size_t heads = a.dim(0), N = a.dim(1);
  if (cls_index >= N || N < 2) throw ContractError("class-token index outside the token range");
  const std::size_t J = N - 1;
  auto d = a.data();
  std::vector<float> out(heads * J);
  for (std::size_t h = 0; h < heads; ++h) {
    const float* row = d.data() + (h * N + cls_index) * N;
    double total = 0;
    std::size_t j = 0;
    for (std::size_t n = 0; n < N; ++n) {
      if (n == cls_index) continue;
      out[h * J + j++] = row[n];
      total += row[n];
    }
    if (total > 0) {
      for (std::size_t k = 0; k < J; ++k) out[h * J + k] = static_cast<float>(out[h * J + k] / total);
    } else {
      std::fill(out.begin() + static_cast<std::ptrdiff_t>(h * J), out.begin() + static_cast<std::ptrdiff_t>((h + 1) * J),
                1.0f / static_cast<float>(J));
    }
  }
  return Tensor::from({heads, J}, std::move(out));
}

Tensor cls_attention(const Backbone& backbone, const Tensor& image, std::optional<std::size_t> layer) {
  const auto* vit = dynamic_cast<const VisionTransformer*>(&backbone);
  if (!vit) {
    throw UnsupportedArchitecture(to_string(backbone.arch()) +
                                  " backbones have no attention matrix; attention maps need a ViT");
  }
  NoGradGuard no_grad;
  const VitOutput out = vit->forward_with_attention(image);
  if (out.attention.empty()) throw ContractError("model has no attention layers");
  return cls_attention(out.attention, layer.value_or(out.attention.size() - 1), 0);
}

Tensor mean_over_heads(const Tensor& maps) {
  if (maps.rank() != 2) throw DimensionError("expected [heads x J] maps, got " + to_string(maps.shape()));
  const std::size_t H = maps.dim(0), J = maps.dim(1);
  auto d = maps.data();
  std::vector<float> out(J);
  for (std::size_t j = 0; j < J; ++j) {
    double s = 0;
    for (std::size_t h = 0; h < H; ++h) s += d[h * J + j];
    out[j] = static_cast<float>(s / static_cast<double>(H));
  }
  return Tensor::from({J}, std::move(out));
}

std::vector<bool> threshold_top_q(const Tensor& map, double q) {
  if (!(q > 0.0 && q <= 1.0)) throw PreconditionError("q must lie in (0, 1]");
  const std::size_t J = map.numel();
  // The epsilon keeps q*J products like 0.2*10 from rounding up past an integer.
  const auto keep = std::min(J, static_cast<std::size_t>(std::ceil(q * static_cast<double>(J) - 1e-9)));
  std::vector<std::size_t> order(J);
  std::iota(order.begin(), order.end(), 0);
  auto d = map.data();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] > d[b]; });
  std::vector<bool> mask(J, false);
  for (std::size_t k = 0; k < keep; ++k) mask[order[k]] = true;
  return mask;
}

Image8 render_overlay(const Image8& image, const std::vector<bool>& mask, std::size_t grid_h, std::size_t grid_w,
                      const OverlayStyle& style) {
  if (grid_h == 0 || grid_w == 0 || mask.size() != grid_h * grid_w) {
    throw DimensionError("mask of " + std::to_string(mask.size()) + " patches does not match a " +
                         std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  }
  if (image.height < grid_h || image.width < grid_w) throw DimensionError("image is smaller than the patch grid");
  Image8 out = image;
  const auto a = static_cast<float>(style.alpha);
  for (std::size_t r = 0; r < grid_h; ++r) {
    const std::size_t y0 = r * image.height / grid_h, y1 = (r + 1) * image.height / grid_h;
    for (std::size_t c = 0; c < grid_w; ++c) {
      if (!mask[r * grid_w + c]) continue;
      const std::size_t x0 = c * image.width / grid_w, x1 = (c + 1) * image.width / grid_w;
      for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = x0; x < x1; ++x) {
          for (std::size_t ch = 0; ch < image.channels; ++ch) {
            const float tint = style.color[std::min<std::size_t>(ch, 2)];
            const float v = (1.0f - a) * image.at(y, x, ch) + a * tint;
            out.at(y, x, ch) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 255.0f)));
          }
        }
      }
    }
  }
  return out;
}

Image8 render_head_panels(const Tensor& head_maps, std::size_t grid_h, std::size_t grid_w, std::size_t panel) {
  if (head_maps.rank() != 2 || head_maps.dim(1) != grid_h * grid_w) {
    throw DimensionError("head maps " + to_string(head_maps.shape()) + " do not match the patch grid");
  }
  const std::size_t heads = head_maps.dim(0);
  const std::size_t ph = panel, pw = std::max<std::size_t>(1, panel * grid_w / grid_h);
  const std::size_t gap = 4;
  Image8 out;
  out.height = ph;
  out.width = heads * pw + (heads - 1) * gap;
  out.channels = 3;
  out.pixels.assign(out.width * out.height * 3, 255);
  auto d = head_maps.data();
  for (std::size_t h = 0; h < heads; ++h) {
    const float* m = d.data() + h * grid_h * grid_w;
    const float hi = *std::max_element(m, m + grid_h * grid_w);
    const float lo = *std::min_element(m, m + grid_h * grid_w);
    const float span = hi > lo ? hi - lo : 1.0f;
    for (std::size_t y = 0; y < ph; ++y) {
      for (std::size_t x = 0; x < pw; ++x) {
        const float v = (m[(y * grid_h / ph) * grid_w + x * grid_w / pw] - lo) / span;
        const std::size_t ox = h * (pw + gap) + x;
        // Dark blue to yellow ramp.
        out.at(y, ox, 0) = static_cast<std::uint8_t>(std::lround(255.0f * v));
        out.at(y, ox, 1) = static_cast<std::uint8_t>(std::lround(40.0f + 200.0f * v));
        out.at(y, ox, 2) = static_cast<std::uint8_t>(std::lround(120.0f * (1.0f - v)));
      }
    }
  }
  return out;
}

AttentionOverlay build_overlay(const Backbone& backbone, const Image8& source, std::optional<std::size_t> layer,
                               double q, const std::vector<float>& mean, const std::vector<float>& std,
                               const OverlayStyle& style) {
  const PatchGeometry& g = backbone.geometry();
  AugmentSpec spec;
  spec.out_h = g.image_h;
  spec.out_w = g.image_w;
  spec.mean = mean;
  spec.std = std;
  const Tensor input = resize_view(to_tensor(source), spec);
  AttentionOverlay o;
  o.source = source;
  o.head_maps = cls_attention(backbone, input, layer);
  o.mean_map = mean_over_heads(o.head_maps);
  o.mask = threshold_top_q(o.mean_map, q);
  o.grid_h = g.grid_h();
  o.grid_w = g.grid_w();
  o.style = style;
  return o;
}

std::array<std::filesystem::path, 2> write_overlay(const AttentionOverlay& overlay, const std::filesystem::path& path) {
  std::filesystem::path heads = path;
  heads.replace_filename(path.stem().string() + "_heads.png");
  write_png(path, render_overlay(overlay.source, overlay.mask, overlay.grid_h, overlay.grid_w, overlay.style));
  write_png(heads, render_head_panels(overlay.head_maps, overlay.grid_h, overlay.grid_w));
  return {path, heads};
}

}  // namespace nvk
