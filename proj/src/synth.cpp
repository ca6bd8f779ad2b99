// SPDX-License-Identifier: Apache-2.0
#include "nvk/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nvk/error.hpp"

namespace nvk {
namespace {

struct Wave {
  double fy, fx, phase, amp;
};

// Sum of a few random plane waves per channel with 1/f amplitudes.
void add_waves(std::vector<float>& img, std::size_t H, std::size_t W, std::size_t C, double strength, Rng& rng) {
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<Wave> waves(5);
    for (auto& w : waves) {
      const double f = rng.uniform(0.5, 4.0);
      const double angle = rng.uniform(0.0, two_pi);
      w = {f * std::sin(angle) / static_cast<double>(H), f * std::cos(angle) / static_cast<double>(W),
           rng.uniform(0.0, two_pi), strength / f};
    }
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double v = 0;
        for (const auto& w : waves) {
          v += w.amp * std::sin(two_pi * (w.fy * static_cast<double>(y) + w.fx * static_cast<double>(x)) + w.phase);
        }
        img[(y * W + x) * C + c] += static_cast<float>(v);
      }
    }
  }
}

void add_blobs(std::vector<float>& img, std::size_t H, std::size_t W, std::size_t C, int count, bool gray, Rng& rng) {
  for (int b = 0; b < count; ++b) {
    const double cy = rng.uniform(0.0, static_cast<double>(H)), cx = rng.uniform(0.0, static_cast<double>(W));
    const double r = rng.uniform(0.05, 0.2) * static_cast<double>(std::min(H, W));
    std::vector<double> delta(C);
    const double base = rng.uniform(-0.25, 0.25);
    for (auto& d : delta) d = gray ? base : rng.uniform(-0.25, 0.25);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        const double w = std::exp(-(dy * dy + dx * dx) / (2.0 * r * r));
        if (w < 1e-3) continue;
        for (std::size_t c = 0; c < C; ++c) img[(y * W + x) * C + c] += static_cast<float>(w * delta[c]);
      }
    }
  }
}

void add_pixel_noise(std::vector<float>& img, double std, Rng& rng) {
  for (auto& v : img) v += static_cast<float>(std * rng.normal());
}

void clamp01(std::vector<float>& img) {
  for (auto& v : img) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace

Tensor natural_noise_image(std::size_t height, std::size_t width, Rng& rng) {
  const std::size_t C = 3;
  std::vector<float> img(height * width * C);
  for (std::size_t c = 0; c < C; ++c) {
    const auto base = static_cast<float>(rng.uniform(0.3, 0.7));
    for (std::size_t i = c; i < img.size(); i += C) img[i] = base;
  }
  add_waves(img, height, width, C, 0.12, rng);
  add_blobs(img, height, width, C, 4, false, rng);
  add_pixel_noise(img, 0.03, rng);
  clamp01(img);
  return Tensor::from({height, width, C}, std::move(img));
}

Tensor texture_family_image(std::size_t height, std::size_t width, std::size_t family, Rng& rng) {
  if (family >= kTextureFamilies) throw PreconditionError("texture family out of range");
  Tensor base = natural_noise_image(height, width, rng);
  auto px = base.mutable_data();
  for (std::size_t y = 0; y < height; ++y) {
    const float stripe = (y / 4) % 2 ? 1.0f : 0.3f;
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const float tint = family == 3 || family == c ? 1.0f : 0.0f;
        float& v = px[(y * width + x) * 3 + c];
        v = 0.4f * v + 0.6f * tint * stripe;
      }
    }
  }
  return base;
}

Tensor bright_dark_image(std::size_t height, std::size_t width, bool bright, Rng& rng) {
  const std::size_t C = 3;
  std::vector<float> img(height * width * C);
  const double level = bright ? rng.uniform(0.65, 0.85) : rng.uniform(0.15, 0.35);
  for (std::size_t c = 0; c < C; ++c) {
    const auto base = static_cast<float>(level + rng.uniform(-0.05, 0.05));
    for (std::size_t i = c; i < img.size(); i += C) img[i] = base;
  }
  add_waves(img, height, width, C, 0.05, rng);
  add_pixel_noise(img, 0.03, rng);
  clamp01(img);
  return Tensor::from({height, width, C}, std::move(img));
}

PlantedScene planted_scene(const PlantedSpec& spec, bool positive, Rng& rng) {
  const std::size_t H = spec.height, W = spec.width, S = spec.object;
  if (S == 0 || S > H || S > W) throw ConfigError("planted object must fit inside the scene");
  std::vector<float> img(H * W * 3);
  const auto base = static_cast<float>(rng.uniform(0.35, 0.65));
  std::fill(img.begin(), img.end(), base);
  // Gray clutter: identical across channels so no region looks red.
  std::vector<float> gray(H * W, 0.0f);
  add_waves(gray, H, W, 1, 0.08, rng);
  add_blobs(gray, H, W, 1, 5, true, rng);
  for (std::size_t i = 0; i < H * W; ++i) {
    for (std::size_t c = 0; c < 3; ++c) img[i * 3 + c] += gray[i];
  }
  add_pixel_noise(img, 0.02, rng);

  PlantedScene scene;
  scene.positive = positive;
  if (positive) {
    const std::size_t side = std::min(H, W);
    const std::size_t band = (W - side) / 2;  // columns outside the central square on each side
    std::size_t left;
    if (band >= S && rng.bernoulli(spec.edge_fraction)) {
      const auto offset = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(band - S)));
      left = rng.bernoulli(0.5) ? offset : W - S - offset;
    } else {
      left = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(W - S)));
    }
    const auto top = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(H - S)));
    scene.object = CropWindow{top, left, S, S};
    const auto r = static_cast<float>(rng.uniform(0.8, 1.0));
    const auto gb = static_cast<float>(rng.uniform(0.0, 0.15));
    for (std::size_t y = top; y < top + S; ++y) {
      for (std::size_t x = left; x < left + S; ++x) {
        img[(y * W + x) * 3 + 0] = r;
        img[(y * W + x) * 3 + 1] = gb;
        img[(y * W + x) * 3 + 2] = gb;
      }
    }
  }
  clamp01(img);
  scene.image = Tensor::from({H, W, 3}, std::move(img));
  return scene;
}

double visible_fraction(const CropWindow& object, const CropWindow& window) {
  const auto overlap = [](std::size_t a0, std::size_t a1, std::size_t b0, std::size_t b1) {
    const std::size_t lo = std::max(a0, b0), hi = std::min(a1, b1);
    return hi > lo ? hi - lo : std::size_t{0};
  };
  const std::size_t oy = overlap(object.top, object.top + object.height, window.top, window.top + window.height);
  const std::size_t ox = overlap(object.left, object.left + object.width, window.left, window.left + window.width);
  const double area = static_cast<double>(object.height * object.width);
  return area > 0 ? static_cast<double>(oy * ox) / area : 0.0;
}

const std::vector<TaskCounts>& benchmark_task_counts() {
  static const std::vector<TaskCounts> counts{
      {"streetlight", {{0, 15792}, {1, 2144}}, {0.75, 0.10, 0.15}},
      {"nsh", {{0, 5528}, {1, 7241}, {9, 757}}, {0.75, 0.10, 0.15}},
      {"green30", {{0, 4162}, {1, 9344}}, {0.75, 0.10, 0.15}},
      {"sidewalk", {{0, 13773}, {1, 4139}}, {0.70, 0.15, 0.15}},
  };
  return counts;
}

LabeledDataset counts_dataset(const TaskCounts& counts) {
  LabeledDataset ds;
  std::vector<int> alphabet;
  for (const auto& c : counts.classes) alphabet.push_back(c.label);
  ds.set_alphabet(counts.task, alphabet);
  for (const auto& c : counts.classes) {
    for (std::size_t n = 0; n < c.count; ++n) {
      ds.add(counts.task + "/" + std::to_string(c.label) + "/" + std::to_string(n), counts.task, c.label);
    }
  }
  return ds;
}

}  // namespace nvk
