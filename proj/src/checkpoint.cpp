// SPDX-License-Identifier: Apache-2.0
#include "nvk/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "nvk/error.hpp"

namespace nvk {
namespace {

constexpr char kMagic[4] = {'N', 'V', 'K', '1'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw CheckpointError("archive truncated at byte " + std::to_string(pos_));
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    auto s = take(2);
    return static_cast<std::uint16_t>(s[0] | (s[1] << 8));
  }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | s[static_cast<std::size_t>(i)];
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_archive(std::span<const NamedTensor> entries) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff) throw CheckpointError("tensor name too long: " + e.name.substr(0, 64));
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    const auto& shape = e.tensor.shape();
    if (shape.size() > 0xff) throw CheckpointError("rank too large for " + e.name);
    out.push_back(static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : e.tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

ParamList decode_archive(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw CheckpointError("bad archive magic (expected NVK1)");
  const std::uint32_t count = r.u32();
  ParamList out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    auto name_bytes = r.take(len);
    std::string name(name_bytes.begin(), name_bytes.end());
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u32();
      if (d == 0) throw CheckpointError("zero dimension in " + name);
    }
    std::vector<float> values(numel(shape));
    for (auto& v : values) v = std::bit_cast<float>(r.u32());
    out.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
  }
  if (!r.done()) throw CheckpointError("trailing bytes after archive payload");
  return out;
}

void save_archive(const std::filesystem::path& path, std::span<const NamedTensor> entries) {
  const auto bytes = encode_archive(entries);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

ParamList load_archive(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

const NamedTensor* find_entry(const ParamList& list, const std::string& name) {
  for (const auto& e : list) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void assign_params(ParamList& target, const ParamList& source, const std::string& source_prefix) {
  for (auto& t : target) {
    const NamedTensor* s = find_entry(source, source_prefix + t.name);
    if (!s) throw CheckpointError("checkpoint is missing tensor '" + source_prefix + t.name + "'");
    if (s->tensor.shape() != t.tensor.shape()) {
      throw CheckpointError("shape mismatch for '" + t.name + "': model " + to_string(t.tensor.shape()) +
                            ", checkpoint " + to_string(s->tensor.shape()));
    }
    auto dst = t.tensor.mutable_data();
    auto src = s->tensor.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

ParamList with_prefix(const ParamList& list, const std::string& prefix) {
  ParamList out;
  out.reserve(list.size());
  for (const auto& e : list) out.push_back({prefix + e.name, e.tensor});
  return out;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_hex(const std::string& text) {
  return sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string params_digest(std::span<const NamedTensor> params) { return sha256_hex(encode_archive(params)); }

}  // namespace nvk
