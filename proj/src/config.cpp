// SPDX-License-Identifier: Apache-2.0
#include "nvk/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "nvk/error.hpp"

namespace nvk {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("'" + what + "' expects a number, got '" + text + "'");
  }
}

}  // namespace

ConfigFile ConfigFile::parse(std::string_view text) {
  ConfigFile cfg;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto cut = line.find_first_of("#;");
    std::string body = trim(cut == std::string::npos ? line : line.substr(0, cut));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
      section = trim(body.substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(body.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    cfg.values_[section][key] = trim(body.substr(eq + 1));
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  auto s = values_.find(section);
  return s != values_.end() && s->second.count(key) > 0;
}

std::string ConfigFile::get(const std::string& section, const std::string& key, const std::string& fallback) const {
  auto s = values_.find(section);
  if (s == values_.end()) return fallback;
  auto k = s->second.find(key);
  return k == s->second.end() ? fallback : k->second;
}

double ConfigFile::get_double(const std::string& section, const std::string& key, double fallback) const {
  return has(section, key) ? to_double(get(section, key, ""), section + "." + key) : fallback;
}

long ConfigFile::get_int(const std::string& section, const std::string& key, long fallback) const {
  if (!has(section, key)) return fallback;
  const std::string text = get(section, key, "");
  long v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError("'" + section + "." + key + "' expects an integer, got '" + text + "'");
  }
  return v;
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get(section, key, "");
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("'" + section + "." + key + "' expects a boolean, got '" + v + "'");
}

std::pair<double, double> ConfigFile::get_range(const std::string& section, const std::string& key,
                                                std::pair<double, double> fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get(section, key, "");
  const auto comma = v.find(',');
  if (comma == std::string::npos) throw ConfigError("'" + section + "." + key + "' expects 'lo,hi', got '" + v + "'");
  const std::string what = section + "." + key;
  return {to_double(trim(v.substr(0, comma)), what), to_double(trim(v.substr(comma + 1)), what)};
}

void ConfigFile::set(const std::string& section, const std::string& key, const std::string& value) {
  values_[section][key] = value;
}

std::string ConfigFile::canonical() const {
  std::string out;
  for (const auto& [section, entries] : values_) {
    out += "[" + section + "]\n";
    for (const auto& [k, v] : entries) out += k + "=" + v + "\n";
  }
  return out;
}

}  // namespace nvk
