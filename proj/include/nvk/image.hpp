// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "nvk/tensor.hpp"

namespace nvk {

/// Interleaved 8-bit image, rows top to bottom.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
};

/// Decodes PNG (any colour type, converted to RGB) or binary PPM (P6, maxval 255),
/// chosen by file signature.
Image8 read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);
void write_ppm(const std::filesystem::path& path, const Image8& image);

/// [H x W x C] floats in [0, 1].
Tensor to_tensor(const Image8& image);
/// Clamps to [0, 1] and rounds to 8 bits.
Image8 to_image8(const Tensor& image);

/// Bilinear resize with half-pixel centers and edge clamping.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);
/// Exact sub-array [top, top+h) x [left, left+w).
Tensor crop(const Tensor& image, std::size_t top, std::size_t left, std::size_t h, std::size_t w);

}  // namespace nvk
