// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "nvk/augment.hpp"
#include "nvk/dataset.hpp"

namespace nvk {

/// Smooth colour field (random low-frequency waves), a few soft blobs and
/// mild pixel noise, in [0, 1]. Stands in for unlabeled street imagery.
Tensor natural_noise_image(std::size_t height, std::size_t width, Rng& rng);

/// Natural-noise image blended with one of `kTextureFamilies` looks: a red,
/// green, blue or neutral tint over horizontal stripes four pixels tall.
/// Gives unlabeled corpora a cluster structure that self-distillation can find.
inline constexpr std::size_t kTextureFamilies = 4;
Tensor texture_family_image(std::size_t height, std::size_t width, std::size_t family, Rng& rng);

/// Textured image whose overall intensity is high (bright) or low (dark).
Tensor bright_dark_image(std::size_t height, std::size_t width, bool bright, Rng& rng);

/// Wide scenes in which a saturated red square may be planted. Backgrounds
/// are low-saturation clutter, so colour alone identifies the object.
struct PlantedSpec {
  std::size_t height = 110;
  std::size_t width = 160;
  std::size_t object = 12;
  /// Share of positives whose object lies entirely outside the central
  /// square (left or right band); the rest are placed uniformly.
  double edge_fraction = 0.5;
};

struct PlantedScene {
  Tensor image;
  bool positive = false;
  CropWindow object;  // meaningful only when positive
};

PlantedScene planted_scene(const PlantedSpec& spec, bool positive, Rng& rng);

/// Share of the object's area that falls inside `window`.
double visible_fraction(const CropWindow& object, const CropWindow& window);

struct ClassCount {
  int label;
  std::size_t count;
};

struct TaskCounts {
  std::string task;
  std::vector<ClassCount> classes;
  std::array<double, 3> ratios;
};

/// Class totals of the four street-view benchmark tasks with their split ratios.
const std::vector<TaskCounts>& benchmark_task_counts();

/// Image-less dataset whose records reproduce the class totals of `task`
/// (paths "<task>/<label>/<n>").
LabeledDataset counts_dataset(const TaskCounts& counts);

}  // namespace nvk
