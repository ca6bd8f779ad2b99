// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "nvk/rng.hpp"
#include "nvk/tensor.hpp"

namespace nvk {

/// One stochastic view transform: random resized crop, horizontal flip,
/// colour jitter, grayscale, Gaussian blur, then per-channel normalization.
/// Setting a probability to 0 removes that stage.
struct AugmentSpec {
  std::pair<double, double> scale{0.08, 1.0};             // fraction of the source area
  std::pair<double, double> ratio{3.0 / 4.0, 4.0 / 3.0};  // width / height, sampled log-uniformly
  std::size_t out_h = 224;
  std::size_t out_w = 224;
  double flip_p = 0.5;
  double jitter_p = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double grayscale_p = 0.2;
  double blur_p = 0.5;
  std::pair<double, double> blur_sigma{0.1, 2.0};
  std::vector<float> mean{0.5f};  // one value (broadcast) or one per channel
  std::vector<float> std{0.5f};

  /// Throws ConfigError on an empty or inverted scale range, non-positive sizes or stds.
  void validate() const;
};

struct CropWindow {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  bool operator==(const CropWindow&) const = default;
};

/// Window sampling of the random resized crop: up to 10 draws of (area,
/// log-aspect); if none fits, the largest centred window whose aspect is
/// clamped into the ratio range.
CropWindow sample_crop_window(std::size_t image_h, std::size_t image_w, const AugmentSpec& spec, Rng& rng);
Tensor random_resized_crop(const Tensor& image, const AugmentSpec& spec, Rng& rng);

Tensor hflip(const Tensor& image);
/// Brightness, contrast, saturation and hue in random order (3-channel images only).
Tensor color_jitter(const Tensor& image, const AugmentSpec& spec, Rng& rng);
Tensor grayscale(const Tensor& image);
/// Separable Gaussian blur, kernel radius ceil(3 sigma), edges clamped.
Tensor gaussian_blur(const Tensor& image, double sigma);
Tensor normalize(const Tensor& image, const std::vector<float>& mean, const std::vector<float>& std);

/// Full stochastic transform of `image` under `spec`.
Tensor augment(const Tensor& image, const AugmentSpec& spec, Rng& rng);

/// Multi-crop recipe for self-distillation.
struct ViewSpec {
  AugmentSpec global1;
  AugmentSpec global2;
  AugmentSpec local;
  std::size_t n_local = 8;
};

/// Two global views (blur always / rarely) and `n_local` smaller local views.
ViewSpec dino_view_spec(std::size_t global_size = 224, std::size_t local_size = 96, std::size_t n_local = 8,
                        std::pair<double, double> global_scale = {0.4, 1.0},
                        std::pair<double, double> local_scale = {0.05, 0.4});

struct ViewSet {
  std::vector<Tensor> global_views;  // exactly 2
  std::vector<Tensor> local_views;
};

ViewSet make_views(const Tensor& image, const ViewSpec& spec, Rng& rng);
/// Pure in (image, seed): the form worker pools use.
ViewSet make_views(const Tensor& image, const ViewSpec& spec, std::uint64_t seed);

/// Corner-anchored windows at (0,0), (W-cw,0), (0,H-ch), (W-cw,H-ch) as (x, y),
/// listed top-left, top-right, bottom-left, bottom-right.
std::array<CropWindow, 4> four_crop_windows(std::size_t image_h, std::size_t image_w, std::size_t crop_h = 256,
                                            std::size_t crop_w = 372);
std::array<Tensor, 4> four_overlapping_crops(const Tensor& image, std::size_t crop_h = 256, std::size_t crop_w = 372);

/// Training transform for supervised evaluation: resized crop with scale
/// 0.08-1 and aspect 1.0-1.6, flip, normalization; no colour stages.
AugmentSpec eval_train_spec(std::size_t out_h, std::size_t out_w);
/// Deterministic inference transform: largest centred window with the
/// output aspect, resized and normalized.
Tensor center_view(const Tensor& image, const AugmentSpec& spec);
/// Whole image squashed to the output size and normalized.
Tensor resize_view(const Tensor& image, const AugmentSpec& spec);

}  // namespace nvk
