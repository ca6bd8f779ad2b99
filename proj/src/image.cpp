// SPDX-License-Identifier: Apache-2.0
#include "nvk/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "nvk/error.hpp"

namespace nvk {
namespace {

void require_hwc(const Tensor& image, const char* what) {
  if (image.rank() != 3) {
    throw DimensionError(std::string(what) + " expects an [H x W x C] image, got " + to_string(image.shape()));
  }
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Image8 decode_png(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw IoError("invalid PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  Image8 out;
  out.width = img.width;
  out.height = img.height;
  out.channels = 3;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

// P6 header: magic, width, height, maxval separated by whitespace, '#' comments allowed.
Image8 decode_ppm(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::size_t pos = 2;
  auto next_int = [&]() -> std::size_t {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
    }
    if (!any) throw IoError("malformed PPM header in " + path.string());
    return v;
  };
  Image8 out;
  out.width = next_int();
  out.height = next_int();
  const std::size_t maxval = next_int();
  if (maxval != 255) throw IoError("only 8-bit PPM is supported: " + path.string());
  ++pos;  // single whitespace before the raster
  out.channels = 3;
  const std::size_t n = out.width * out.height * 3;
  if (out.width == 0 || out.height == 0 || bytes.size() < pos + n) {
    throw IoError("truncated PPM raster in " + path.string());
  }
  out.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return out;
}

}  // namespace

Image8 read_image(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes, path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes, path);
  throw IoError("unsupported image format (expected PNG or P6 PPM): " + path.string());
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 3 && image.channels != 1) throw ContractError("PNG writer supports 1 or 3 channels");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

void write_ppm(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 3) throw ContractError("PPM writer needs 3 channels");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write PPM " + path.string());
  f << "P6\n" << image.width << " " << image.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!f) throw IoError("short write to " + path.string());
}

Tensor to_tensor(const Image8& image) {
  std::vector<float> v(image.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(image.pixels[i]) / 255.0f;
  return Tensor::from({image.height, image.width, image.channels}, std::move(v));
}

Image8 to_image8(const Tensor& image) {
  require_hwc(image, "to_image8");
  Image8 out;
  out.height = image.dim(0);
  out.width = image.dim(1);
  out.channels = image.dim(2);
  out.pixels.resize(image.numel());
  auto d = image.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(d[i], 0.0f, 1.0f) * 255.0f));
  }
  return out;
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  require_hwc(image, "resize_bilinear");
  const std::size_t H = image.dim(0), W = image.dim(1), C = image.dim(2);
  if (out_h == 0 || out_w == 0) throw DimensionError("resize target must be positive");
  if (out_h == H && out_w == W) return image.detach();
  auto src = image.data();
  std::vector<float> out(out_h * out_w * C);
  const double sy = static_cast<double>(H) / static_cast<double>(out_h);
  const double sx = static_cast<double>(W) / static_cast<double>(out_w);
  struct Tap {
    std::size_t i0, i1;
    float w1;
  };
  auto taps = [](std::size_t n_out, std::size_t n_in, double s) {
    std::vector<Tap> t(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
      double c = std::clamp((static_cast<double>(o) + 0.5) * s - 0.5, 0.0, static_cast<double>(n_in - 1));
      auto i0 = static_cast<std::size_t>(std::floor(c));
      std::size_t i1 = std::min(i0 + 1, n_in - 1);
      t[o] = {i0, i1, static_cast<float>(c - static_cast<double>(i0))};
    }
    return t;
  };
  const auto ty = taps(out_h, H, sy);
  const auto tx = taps(out_w, W, sx);
  for (std::size_t y = 0; y < out_h; ++y) {
    const Tap& a = ty[y];
    for (std::size_t x = 0; x < out_w; ++x) {
      const Tap& b = tx[x];
      for (std::size_t c = 0; c < C; ++c) {
        const float p00 = src[(a.i0 * W + b.i0) * C + c], p01 = src[(a.i0 * W + b.i1) * C + c];
        const float p10 = src[(a.i1 * W + b.i0) * C + c], p11 = src[(a.i1 * W + b.i1) * C + c];
        const float top = p00 + (p01 - p00) * b.w1;
        const float bot = p10 + (p11 - p10) * b.w1;
        out[(y * out_w + x) * C + c] = top + (bot - top) * a.w1;
      }
    }
  }
  return Tensor::from({out_h, out_w, C}, std::move(out));
}

Tensor crop(const Tensor& image, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  require_hwc(image, "crop");
  const std::size_t H = image.dim(0), W = image.dim(1), C = image.dim(2);
  if (h == 0 || w == 0 || top + h > H || left + w > W) {
    throw DimensionError("crop window " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                         std::to_string(top) + "," + std::to_string(left) + ") exceeds image " + to_string(image.shape()));
  }
  auto src = image.data();
  std::vector<float> out(h * w * C);
  for (std::size_t y = 0; y < h; ++y) {
    const float* row = src.data() + ((top + y) * W + left) * C;
    std::copy(row, row + w * C, out.begin() + static_cast<std::ptrdiff_t>(y * w * C));
  }
  return Tensor::from({h, w, C}, std::move(out));
}

}  // namespace nvk
