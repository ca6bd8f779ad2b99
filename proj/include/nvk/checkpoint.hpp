// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nvk/tensor.hpp"

namespace nvk {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

/// "NVK1" archive layout, all integers little-endian:
///   magic "NVK1" | u32 count | count x (u16 name_len | name | u8 rank | rank x u32 dim | f32 payload)
std::vector<std::uint8_t> encode_archive(std::span<const NamedTensor> entries);
ParamList decode_archive(std::span<const std::uint8_t> bytes);

void save_archive(const std::filesystem::path& path, std::span<const NamedTensor> entries);
ParamList load_archive(const std::filesystem::path& path);

/// Copies values from `source` into same-named tensors of `target`. Every
/// target name must be present with an identical shape.
void assign_params(ParamList& target, const ParamList& source, const std::string& source_prefix = "");

/// Entry with the given name, or nullptr.
const NamedTensor* find_entry(const ParamList& list, const std::string& name);

/// Prefixes every name ("student." + "vit.cls").
ParamList with_prefix(const ParamList& list, const std::string& prefix);

/// Lower-case hex SHA-256 of a byte range.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);
/// SHA-256 of the encoded archive of `params`.
std::string params_digest(std::span<const NamedTensor> params);

}  // namespace nvk
