// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <string>

#include "nvk/checkpoint.hpp"
#include "nvk/rng.hpp"
#include "nvk/tensor.hpp"

namespace nvk {

enum class Arch { vit, vim };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& name);

/// Input resolution and patch tiling shared by both backbones.
struct PatchGeometry {
  std::size_t image_h = 224;
  std::size_t image_w = 224;
  std::size_t patch = 16;
  std::size_t channels = 3;

  std::size_t grid_h() const { return image_h / patch; }
  std::size_t grid_w() const { return image_w / patch; }
  std::size_t num_patches() const { return grid_h() * grid_w(); }
  /// Throws ConfigError unless both sides are positive multiples of the patch size.
  void validate() const;
};

/// Feature extractor exclusive of any task head.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual Arch arch() const = 0;
  virtual std::size_t embed_dim() const = 0;
  virtual const PatchGeometry& geometry() const = 0;
  /// Class-token representation [D] of one [H x W x C] image.
  virtual Tensor forward(const Tensor& image) const = 0;
  /// Parameters under their checkpoint names, in a fixed order.
  virtual ParamList parameters() const = 0;
  virtual std::unique_ptr<Backbone> clone() const = 0;
};

/// Projection weight drawn from a normal truncated at two standard deviations.
Tensor trunc_normal_param(Shape shape, double std, Rng& rng);
Tensor constant_param(Shape shape, float value);

/// [J' x J] bilinear interpolation matrix that maps positional rows laid out
/// on a (from_h x from_w) grid to a (to_h x to_w) grid (half-pixel centers).
Tensor grid_resample_matrix(std::size_t from_h, std::size_t from_w, std::size_t to_h, std::size_t to_w);

/// Deep copy of parameter values from one backbone into another of the same shape.
void copy_parameters(const Backbone& from, Backbone& to);

}  // namespace nvk
