// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>

namespace nvk {

/// Plain-text `key = value` file with optional `[section]` headers.
/// `#` and `;` start comments. Keys before the first header live in section "".
class ConfigFile {
 public:
  static ConfigFile parse(std::string_view text);
  static ConfigFile load(const std::filesystem::path& path);

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  long get_int(const std::string& section, const std::string& key, long fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  /// "lo,hi" pair.
  std::pair<double, double> get_range(const std::string& section, const std::string& key,
                                      std::pair<double, double> fallback) const;
  void set(const std::string& section, const std::string& key, const std::string& value);

  /// Canonical serialization (sections and keys sorted); what run manifests hash.
  std::string canonical() const;

 private:
  std::map<std::string, std::map<std::string, std::string>> values_;
};

}  // namespace nvk
