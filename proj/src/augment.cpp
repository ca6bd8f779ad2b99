// SPDX-License-Identifier: Apache-2.0
#include "nvk/augment.hpp"

#include <algorithm>
#include <cmath>

#include "nvk/error.hpp"
#include "nvk/image.hpp"

namespace nvk {
namespace {

void require_hwc(const Tensor& image, const char* what) {
  if (image.rank() != 3) {
    throw DimensionError(std::string(what) + " expects an [H x W x C] image, got " + to_string(image.shape()));
  }
}

float luma(const float* px) { return 0.299f * px[0] + 0.587f * px[1] + 0.114f * px[2]; }

// Blend towards `other` (a per-pixel or constant reference) by factor f, clamped to [0, 1].
void blend(std::vector<float>& img, const std::vector<float>& other, float f) {
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(other[i] + f * (img[i] - other[i]), 0.0f, 1.0f);
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
  } else if (mx == r) {
    h = std::fmod((g - b) / d, 6.0f) / 6.0f;
  } else if (mx == g) {
    h = ((b - r) / d + 2.0f) / 6.0f;
  } else {
    h = ((r - g) / d + 4.0f) / 6.0f;
  }
  if (h < 0.0f) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float h6 = h * 6.0f;
  const int sector = static_cast<int>(std::floor(h6)) % 6;
  const float f = h6 - std::floor(h6);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

std::vector<float> gray_copy(const std::vector<float>& img) {
  std::vector<float> g(img.size());
  for (std::size_t i = 0; i < img.size(); i += 3) g[i] = g[i + 1] = g[i + 2] = luma(&img[i]);
  return g;
}

}  // namespace

void AugmentSpec::validate() const {
  if (!(scale.first > 0.0 && scale.first <= scale.second && scale.second <= 1.0)) {
    throw ConfigError("crop scale range must satisfy 0 < min <= max <= 1");
  }
  if (!(ratio.first > 0.0 && ratio.first <= ratio.second)) throw ConfigError("aspect ratio range must be 0 < min <= max");
  if (out_h == 0 || out_w == 0) throw ConfigError("augmentation output size must be positive");
  if (mean.empty() || std.empty()) throw ConfigError("normalization mean/std must not be empty");
  for (float s : std) {
    if (!(s > 0.0f)) throw ConfigError("normalization std must be positive");
  }
  if (!(blur_sigma.first > 0.0 && blur_sigma.first <= blur_sigma.second)) throw ConfigError("blur sigma range invalid");
}

CropWindow sample_crop_window(std::size_t image_h, std::size_t image_w, const AugmentSpec& spec, Rng& rng) {
  const double H = static_cast<double>(image_h), W = static_cast<double>(image_w);
  const double area = H * W;
  const double log_lo = std::log(spec.ratio.first), log_hi = std::log(spec.ratio.second);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(spec.scale.first, spec.scale.second);
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    const auto w = static_cast<long>(std::lround(std::sqrt(target * aspect)));
    const auto h = static_cast<long>(std::lround(std::sqrt(target / aspect)));
    if (w > 0 && h > 0 && w <= static_cast<long>(image_w) && h <= static_cast<long>(image_h)) {
      CropWindow win;
      win.height = static_cast<std::size_t>(h);
      win.width = static_cast<std::size_t>(w);
      win.top = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(image_h) - h));
      win.left = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(image_w) - w));
      return win;
    }
  }
  CropWindow win;
  const double in_ratio = W / H;
  if (in_ratio < spec.ratio.first) {
    win.width = image_w;
    win.height = std::min<std::size_t>(image_h, std::max<long>(1, std::lround(W / spec.ratio.first)));
  } else if (in_ratio > spec.ratio.second) {
    win.height = image_h;
    win.width = std::min<std::size_t>(image_w, std::max<long>(1, std::lround(H * spec.ratio.second)));
  } else {
    win.height = image_h;
    win.width = image_w;
  }
  win.top = (image_h - win.height) / 2;
  win.left = (image_w - win.width) / 2;
  return win;
}

Tensor random_resized_crop(const Tensor& image, const AugmentSpec& spec, Rng& rng) {
  require_hwc(image, "random_resized_crop");
  const CropWindow w = sample_crop_window(image.dim(0), image.dim(1), spec, rng);
  return resize_bilinear(crop(image, w.top, w.left, w.height, w.width), spec.out_h, spec.out_w);
}

Tensor hflip(const Tensor& image) {
  require_hwc(image, "hflip");
  const std::size_t H = image.dim(0), W = image.dim(1), C = image.dim(2);
  auto src = image.data();
  std::vector<float> out(src.size());
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < C; ++c) out[(y * W + x) * C + c] = src[(y * W + (W - 1 - x)) * C + c];
    }
  }
  return Tensor::from(image.shape(), std::move(out));
}

Tensor color_jitter(const Tensor& image, const AugmentSpec& spec, Rng& rng) {
  require_hwc(image, "color_jitter");
  if (image.dim(2) != 3) return image.detach();
  std::vector<float> img(image.data().begin(), image.data().end());
  std::array<int, 4> order{0, 1, 2, 3};
  shuffle(order.begin(), order.end(), rng);
  for (int op : order) {
    switch (op) {
      case 0: {
        if (spec.brightness <= 0) break;
        const auto f = static_cast<float>(rng.uniform(1 - spec.brightness, 1 + spec.brightness));
        for (auto& v : img) v = std::clamp(v * f, 0.0f, 1.0f);
        break;
      }
      case 1: {
        if (spec.contrast <= 0) break;
        const auto f = static_cast<float>(rng.uniform(1 - spec.contrast, 1 + spec.contrast));
        double m = 0;
        for (std::size_t i = 0; i < img.size(); i += 3) m += luma(&img[i]);
        m /= static_cast<double>(img.size() / 3);
        blend(img, std::vector<float>(img.size(), static_cast<float>(m)), f);
        break;
      }
      case 2: {
        if (spec.saturation <= 0) break;
        const auto f = static_cast<float>(rng.uniform(1 - spec.saturation, 1 + spec.saturation));
        blend(img, gray_copy(img), f);
        break;
      }
      default: {
        if (spec.hue <= 0) break;
        const auto shift = static_cast<float>(rng.uniform(-spec.hue, spec.hue));
        for (std::size_t i = 0; i < img.size(); i += 3) {
          float h, s, v;
          rgb_to_hsv(img[i], img[i + 1], img[i + 2], h, s, v);
          h = h + shift;
          h -= std::floor(h);
          hsv_to_rgb(h, s, v, img[i], img[i + 1], img[i + 2]);
        }
        break;
      }
    }
  }
  return Tensor::from(image.shape(), std::move(img));
}

Tensor grayscale(const Tensor& image) {
  require_hwc(image, "grayscale");
  if (image.dim(2) != 3) return image.detach();
  return Tensor::from(image.shape(), gray_copy({image.data().begin(), image.data().end()}));
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  require_hwc(image, "gaussian_blur");
  if (!(sigma > 0)) throw PreconditionError("blur sigma must be positive");
  const std::size_t H = image.dim(0), W = image.dim(1), C = image.dim(2);
  const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (long i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = static_cast<float>(w);
    total += w;
  }
  for (auto& k : kernel) k = static_cast<float>(k / total);

  auto src = image.data();
  std::vector<float> tmp(src.size()), out(src.size());
  auto clampi = [](long v, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(n) - 1)); };
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < C; ++c) {
        float acc = 0;
        for (long k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] * src[(y * W + clampi(static_cast<long>(x) + k, W)) * C + c];
        }
        tmp[(y * W + x) * C + c] = acc;
      }
    }
  }
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < C; ++c) {
        float acc = 0;
        for (long k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[(clampi(static_cast<long>(y) + k, H) * W + x) * C + c];
        }
        out[(y * W + x) * C + c] = acc;
      }
    }
  }
  return Tensor::from(image.shape(), std::move(out));
}

Tensor normalize(const Tensor& image, const std::vector<float>& mean, const std::vector<float>& std) {
  require_hwc(image, "normalize");
  const std::size_t C = image.dim(2);
  auto pick = [C](const std::vector<float>& v, std::size_t c, const char* what) {
    if (v.size() == 1) return v[0];
    if (v.size() != C) {
      throw ConfigError(std::string("normalization ") + what + " has " + std::to_string(v.size()) +
                        " entries for a " + std::to_string(C) + "-channel image");
    }
    return v[c];
  };
  std::vector<float> m(C), inv(C);
  for (std::size_t c = 0; c < C; ++c) {
    m[c] = pick(mean, c, "mean");
    inv[c] = 1.0f / pick(std, c, "std");
  }
  auto src = image.data();
  std::vector<float> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = (src[i] - m[i % C]) * inv[i % C];
  return Tensor::from(image.shape(), std::move(out));
}

Tensor augment(const Tensor& image, const AugmentSpec& spec, Rng& rng) {
  Tensor x = random_resized_crop(image, spec, rng);
  if (rng.bernoulli(spec.flip_p)) x = hflip(x);
  if (rng.bernoulli(spec.jitter_p)) x = color_jitter(x, spec, rng);
  if (rng.bernoulli(spec.grayscale_p)) x = grayscale(x);
  if (rng.bernoulli(spec.blur_p)) x = gaussian_blur(x, rng.uniform(spec.blur_sigma.first, spec.blur_sigma.second));
  return normalize(x, spec.mean, spec.std);
}

ViewSpec dino_view_spec(std::size_t global_size, std::size_t local_size, std::size_t n_local,
                        std::pair<double, double> global_scale, std::pair<double, double> local_scale) {
  ViewSpec v;
  v.global1.scale = global_scale;
  v.global1.out_h = v.global1.out_w = global_size;
  v.global1.blur_p = 1.0;
  v.global2 = v.global1;
  v.global2.blur_p = 0.1;
  v.local.scale = local_scale;
  v.local.out_h = v.local.out_w = local_size;
  v.local.blur_p = 0.5;
  v.n_local = n_local;
  v.global1.validate();
  v.global2.validate();
  v.local.validate();
  return v;
}

ViewSet make_views(const Tensor& image, const ViewSpec& spec, Rng& rng) {
  ViewSet views;
  views.global_views.push_back(augment(image, spec.global1, rng));
  views.global_views.push_back(augment(image, spec.global2, rng));
  views.local_views.reserve(spec.n_local);
  for (std::size_t i = 0; i < spec.n_local; ++i) views.local_views.push_back(augment(image, spec.local, rng));
  return views;
}

ViewSet make_views(const Tensor& image, const ViewSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  return make_views(image, spec, rng);
}

std::array<CropWindow, 4> four_crop_windows(std::size_t image_h, std::size_t image_w, std::size_t crop_h,
                                            std::size_t crop_w) {
  if (crop_h == 0 || crop_w == 0) throw DimensionError("crop size must be positive");
  if (image_h < crop_h || image_w < crop_w) {
    throw DimensionError("image " + std::to_string(image_w) + "x" + std::to_string(image_h) + " is smaller than the " +
                         std::to_string(crop_w) + "x" + std::to_string(crop_h) + " crop");
  }
  const std::size_t dx = image_w - crop_w, dy = image_h - crop_h;
  return {CropWindow{0, 0, crop_h, crop_w}, CropWindow{0, dx, crop_h, crop_w}, CropWindow{dy, 0, crop_h, crop_w},
          CropWindow{dy, dx, crop_h, crop_w}};
}

std::array<Tensor, 4> four_overlapping_crops(const Tensor& image, std::size_t crop_h, std::size_t crop_w) {
  require_hwc(image, "four_overlapping_crops");
  const auto windows = four_crop_windows(image.dim(0), image.dim(1), crop_h, crop_w);
  std::array<Tensor, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& w = windows[i];
    out[i] = crop(image, w.top, w.left, w.height, w.width);
  }
  return out;
}

AugmentSpec eval_train_spec(std::size_t out_h, std::size_t out_w) {
  AugmentSpec s;
  s.scale = {0.08, 1.0};
  s.ratio = {1.0, 1.6};
  s.out_h = out_h;
  s.out_w = out_w;
  s.flip_p = 0.5;
  s.jitter_p = 0.0;
  s.grayscale_p = 0.0;
  s.blur_p = 0.0;
  return s;
}

Tensor center_view(const Tensor& image, const AugmentSpec& spec) {
  require_hwc(image, "center_view");
  const std::size_t H = image.dim(0), W = image.dim(1);
  const double target = static_cast<double>(spec.out_w) / static_cast<double>(spec.out_h);
  std::size_t ch = H, cw = W;
  if (static_cast<double>(W) / static_cast<double>(H) > target) {
    cw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(H) * target)));
  } else {
    ch = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(W) / target)));
  }
  Tensor c = crop(image, (H - ch) / 2, (W - cw) / 2, ch, cw);
  return normalize(resize_bilinear(c, spec.out_h, spec.out_w), spec.mean, spec.std);
}

Tensor resize_view(const Tensor& image, const AugmentSpec& spec) {
  return normalize(resize_bilinear(image, spec.out_h, spec.out_w), spec.mean, spec.std);
}

}  // namespace nvk
