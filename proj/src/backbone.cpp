// SPDX-License-Identifier: Apache-2.0
#include "nvk/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "nvk/error.hpp"

namespace nvk {

std::string to_string(Arch arch) { return arch == Arch::vit ? "vit" : "vim"; }

Arch parse_arch(const std::string& name) {
  if (name == "vit") return Arch::vit;
  if (name == "vim") return Arch::vim;
  throw ConfigError("unknown model '" + name + "' (expected vit or vim)");
}

void PatchGeometry::validate() const {
  if (patch == 0 || channels == 0 || image_h == 0 || image_w == 0) {
    throw ConfigError("image size, patch size and channels must be positive");
  }
  if (image_h % patch != 0 || image_w % patch != 0) {
    throw ConfigError("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                      " is not divisible by patch size " + std::to_string(patch));
  }
}

Tensor trunc_normal_param(Shape shape, double std, Rng& rng) {
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.truncated_normal(std));
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor constant_param(Shape shape, float value) { return Tensor::full(std::move(shape), value, true); }

Tensor grid_resample_matrix(std::size_t from_h, std::size_t from_w, std::size_t to_h, std::size_t to_w) {
  const std::size_t J = from_h * from_w, Jn = to_h * to_w;
  std::vector<float> m(Jn * J, 0.0f);
  auto axis_weights = [](std::size_t dst, std::size_t to, std::size_t from) {
    double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(from) / static_cast<double>(to) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(from - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, from - 1);
    const double t = src - static_cast<double>(lo);
    return std::tuple{lo, hi, t};
  };
  for (std::size_t y = 0; y < to_h; ++y) {
    auto [y0, y1, ty] = axis_weights(y, to_h, from_h);
    for (std::size_t x = 0; x < to_w; ++x) {
      auto [x0, x1, tx] = axis_weights(x, to_w, from_w);
      float* row = &m[(y * to_w + x) * J];
      row[y0 * from_w + x0] += static_cast<float>((1 - ty) * (1 - tx));
      row[y0 * from_w + x1] += static_cast<float>((1 - ty) * tx);
      row[y1 * from_w + x0] += static_cast<float>(ty * (1 - tx));
      row[y1 * from_w + x1] += static_cast<float>(ty * tx);
    }
  }
  return Tensor::from({Jn, J}, std::move(m));
}

void copy_parameters(const Backbone& from, Backbone& to) {
  ParamList dst = to.parameters();
  assign_params(dst, from.parameters());
}

}  // namespace nvk
