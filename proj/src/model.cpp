// SPDX-License-Identifier: Apache-2.0
#include "nvk/model.hpp"

#include "nvk/error.hpp"

namespace nvk {
namespace {

PatchGeometry read_geometry(const ConfigFile& cfg) {
  PatchGeometry g;
  const std::string size = cfg.get("model", "image_size", "224");
  const auto x = size.find('x');
  try {
    if (x == std::string::npos) {
      g.image_h = g.image_w = std::stoul(size);
    } else {
      g.image_h = std::stoul(size.substr(0, x));
      g.image_w = std::stoul(size.substr(x + 1));
    }
  } catch (const std::exception&) {
    throw ConfigError("model.image_size must be N or HxW, got '" + size + "'");
  }
  g.patch = static_cast<std::size_t>(cfg.get_int("model", "patch", 16));
  g.channels = static_cast<std::size_t>(cfg.get_int("model", "channels", 3));
  g.validate();
  return g;
}

std::size_t positive(const ConfigFile& cfg, const char* key, long fallback) {
  const long v = cfg.get_int("model", key, fallback);
  if (v <= 0) throw ConfigError(std::string("model.") + key + " must be positive");
  return static_cast<std::size_t>(v);
}

}  // namespace

ModelConfig ModelConfig::from_config(const ConfigFile& cfg) {
  ModelConfig m;
  m.arch = parse_arch(cfg.get("model", "arch", "vit"));
  const PatchGeometry g = read_geometry(cfg);
  const double init_std = cfg.get_double("model", "init_std", 0.02);

  m.vit.geometry = g;
  m.vit.embed_dim = positive(cfg, "embed_dim", 384);
  m.vit.depth = static_cast<std::size_t>(cfg.get_int("model", "depth", m.arch == Arch::vit ? 12 : 24));
  m.vit.heads = positive(cfg, "heads", 6);
  m.vit.mlp_ratio = positive(cfg, "mlp_ratio", 4);
  m.vit.init_std = init_std;

  m.vim.geometry = g;
  m.vim.embed_dim = m.vit.embed_dim;
  m.vim.depth = m.vit.depth;
  m.vim.state_size = positive(cfg, "state_size", 16);
  m.vim.expand = positive(cfg, "expand", 2);
  m.vim.init_std = init_std;
  m.vim.nan_guard = cfg.get_bool("model", "nan_guard", true);
  m.vim.depthwise_conv = cfg.get_bool("model", "depthwise_conv", false);

  if (m.arch == Arch::vit) {
    m.vit.validate();
  } else {
    m.vim.validate();
  }
  return m;
}

std::unique_ptr<Backbone> make_backbone(const ModelConfig& config, Rng& rng) {
  if (config.arch == Arch::vit) return std::make_unique<VisionTransformer>(config.vit, rng);
  return std::make_unique<VisionMamba>(config.vim, rng);
}

void load_backbone(Backbone& backbone, const ParamList& archive) {
  ParamList target = backbone.parameters();
  const std::string first = target.front().name;
  for (const char* prefix : {"", "teacher.", "student."}) {
    if (find_entry(archive, prefix + first)) {
      assign_params(target, archive, prefix);
      return;
    }
  }
  throw CheckpointError("archive has no '" + first + "' entry; it does not hold a " + to_string(backbone.arch()) +
                        " backbone");
}

}  // namespace nvk
