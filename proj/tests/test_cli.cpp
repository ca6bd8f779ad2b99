// SPDX-License-Identifier: Apache-2.0
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "nvk/dino.hpp"
#include "nvk/eval.hpp"
#include "nvk/model.hpp"
#include "nvk/pipeline.hpp"

using namespace nvk;

namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("nvk_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Runs the tool with `args`, stdout and stderr captured into `log`; returns the exit code.
int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(NVK_CLI) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Small and quick variant of the toy pretraining config.
fs::path write_small_config(const fs::path& dir) {
  const fs::path cfg = dir / "small.cfg";
  std::ofstream(cfg) << "[model]\narch = vit\nimage_size = 16\npatch = 4\nembed_dim = 8\ndepth = 1\nheads = 2\n"
                        "init_std = 0.2\nseed = 3\n"
                        "[data]\nsynthetic_images = 8\nsynthetic_size = 24\nseed = 1\n"
                        "[dino]\nepochs = 2\nbatch_size = 4\nn_local_crops = 2\nglobal_size = 16\nlocal_size = 8\n"
                        "warmup_epochs = 1\nlr = 1e-3\nhead_hidden = 16\nhead_bottleneck = 8\nout_dim = 16\n"
                        "checkpoint_every = 1\nseed = 2\n"
                        "[eval]\nepochs = 3\nlr = 1e-2\nbatch_size = 8\naugment = false\nframing = squash\nseed = 4\n";
  return cfg;
}

}  // namespace

TEST_CASE("split reproduces the benchmark proportions") {
  auto dir = scratch_dir("split");
  REQUIRE(run_cli("split --ratios 75,10,15 --task streetlight --out " + dir.string(), dir / "log.txt") == 0);
  CHECK(read_text(dir / "split_streetlight_counts.csv") == "class,train,val,test\n0,11844,1579,2369\n1,1608,214,322\n");
  auto manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
  CHECK(manifest["command"] == "split");
  CHECK(manifest["artifacts"]["split_streetlight.csv"] == file_sha256(dir / "split_streetlight.csv"));
  CHECK(manifest["config_sha256"].get<std::string>().size() == 64);
}

TEST_CASE("zero-epoch pretraining saves the initial weights") {
  auto dir = scratch_dir("pretrain0");
  const fs::path cfg_path = write_small_config(dir);
  REQUIRE(run_cli("pretrain --config " + cfg_path.string() + " --epochs 0 --out " + (dir / "run").string(),
                  dir / "log.txt") == 0);
  const ParamList ckpt = load_archive(dir / "run" / "checkpoint.nvk");
  const auto init = build_backbone(ConfigFile::load(cfg_path), std::nullopt);
  for (const auto& p : init->parameters()) {
    for (const std::string prefix : {"student.", "teacher."}) {
      const NamedTensor* e = find_entry(ckpt, prefix + p.name);
      REQUIRE(e != nullptr);
      CHECK(params_digest(ParamList{{p.name, e->tensor}}) == params_digest(ParamList{p}));
    }
  }
  CHECK(read_text(dir / "run" / "train_log.csv").find('\n') == read_text(dir / "run" / "train_log.csv").size() - 1);
}

TEST_CASE("resuming from an epoch snapshot matches an uninterrupted run") {
  auto dir = scratch_dir("resume");
  const std::string cfg = write_small_config(dir).string();
  REQUIRE(run_cli("pretrain --config " + cfg + " --out " + (dir / "full").string(), dir / "a.txt") == 0);
  REQUIRE(run_cli("pretrain --config " + cfg + " --out " + (dir / "again").string(), dir / "b.txt") == 0);
  REQUIRE(run_cli("pretrain --config " + cfg + " --resume " + (dir / "full" / "ckpt_epoch1.nvk").string() +
                      " --out " + (dir / "resumed").string(),
                  dir / "c.txt") == 0);
  const auto full = file_sha256(dir / "full" / "checkpoint.nvk");
  CHECK(file_sha256(dir / "again" / "checkpoint.nvk") == full);
  CHECK(file_sha256(dir / "again" / "train_log.csv") == file_sha256(dir / "full" / "train_log.csv"));
  CHECK(file_sha256(dir / "resumed" / "checkpoint.nvk") == full);
}

TEST_CASE("probe, evaluate and visualize on a synthetic corpus") {
  auto dir = scratch_dir("supervised");
  const std::string cfg = write_small_config(dir).string();
  REQUIRE(run_cli("synth-data --kind bright-dark --count 40 --size 16 --seed 9 --out " + (dir / "data").string(),
                  dir / "synth.txt") == 0);
  const std::string labels = (dir / "data" / "labels.csv").string();
  for (const char* run : {"p1", "p2"}) {
    REQUIRE(run_cli("probe --config " + cfg + " --labels " + labels + " --out " + (dir / run).string(),
                    dir / "probe.txt") == 0);
  }
  CHECK(file_sha256(dir / "p1" / "classifier.nvk") == file_sha256(dir / "p2" / "classifier.nvk"));
  CHECK(read_text(dir / "p1" / "results.json") == read_text(dir / "p2" / "results.json"));
  auto results = nlohmann::json::parse(read_text(dir / "p1" / "results.json"));
  CHECK(results["task"] == "tone");
  CHECK(results["mode"] == "linear_probe");
  CHECK(results["confusion"].size() == 2);

  REQUIRE(run_cli("evaluate --config " + cfg + " --labels " + labels + " --ckpt " +
                      (dir / "p1" / "classifier.nvk").string() + " --out " + (dir / "ev").string(),
                  dir / "eval.txt") == 0);
  auto evaluated = nlohmann::json::parse(read_text(dir / "ev" / "results.json"));
  CHECK(evaluated["acc"] == results["acc"]);
  CHECK(evaluated["confusion"] == results["confusion"]);

  REQUIRE(run_cli("visualize --config " + cfg + " --ckpt " + (dir / "p1" / "classifier.nvk").string() + " --image " +
                      (dir / "data" / "bright_00001.png").string() + " --q 0.25 --out " + (dir / "viz").string(),
                  dir / "viz.txt") == 0);
  CHECK(fs::exists(dir / "viz" / "bright_00001_attn.png"));
  CHECK(fs::exists(dir / "viz" / "bright_00001_attn_heads.png"));
}

TEST_CASE("exit codes") {
  auto dir = scratch_dir("exit");
  const fs::path log = dir / "log.txt";
  CHECK(run_cli("pretrain --no-such-flag", log) == 1);
  CHECK(read_text(log).find("Usage") != std::string::npos);
  CHECK(run_cli("", log) == 1);
  CHECK(run_cli("split --task nowhere --out " + dir.string(), log) == 1);
  CHECK(run_cli("split --task streetlight --ratios 1,2 --out " + dir.string(), log) == 1);
  CHECK(run_cli("synth-data --kind unknown --out " + dir.string(), log) == 1);

  const fs::path cfg = write_small_config(dir);
  std::ofstream(cfg, std::ios::app) << "[dino]\nlr = 1e30\nnan_abort_after = 2\n";
  CHECK(run_cli("pretrain --config " + cfg.string() + " --out " + (dir / "nan").string(), log) == 2);
  CHECK(fs::exists(dir / "nan" / "train_log.csv"));
}

TEST_CASE("shipped configs parse") {
  for (const char* name : {"toy_vit.cfg", "toy_vim.cfg", "vit_s16.cfg", "planted_vit.cfg"}) {
    INFO(name);
    const ConfigFile cfg = ConfigFile::load(fs::path(NVK_CONFIG_DIR) / name);
    const ModelConfig mc = ModelConfig::from_config(cfg);
    CHECK_NOTHROW(DinoConfig::from_config(cfg).validate());
    CHECK_NOTHROW(ProbeConfig::from_config(cfg));
    if (mc.arch == Arch::vit) CHECK_NOTHROW(mc.vit.validate());
    else CHECK_NOTHROW(mc.vim.validate());
  }
}

TEST_CASE("four-crop voting beats a single centre crop on planted scenes") {
  auto dir = scratch_dir("planted");
  const std::string cfg = (fs::path(NVK_CONFIG_DIR) / "planted_vit.cfg").string();
  REQUIRE(run_cli("synth-data --kind planted --count 200 --seed 11 --config " + cfg + " --out " +
                      (dir / "data").string(),
                  dir / "synth.txt") == 0);
  REQUIRE(run_cli("finetune --config " + cfg + " --labels " + (dir / "data" / "crops" / "labels.csv").string() +
                      " --out " + (dir / "model").string(),
                  dir / "ft.txt") == 0);
  double bacc[2];
  int i = 0;
  for (const char* voting : {"single_crop", "four_crop"}) {
    const fs::path out = dir / voting;
    REQUIRE(run_cli("evaluate --config " + cfg + " --labels " + (dir / "data" / "scenes" / "labels.csv").string() +
                        " --ratios 0,0,100 --framing center --voting " + voting + " --ckpt " +
                        (dir / "model" / "classifier.nvk").string() + " --out " + out.string(),
                    dir / "ev.txt") == 0);
    auto r = nlohmann::json::parse(read_text(out / "results.json"));
    CHECK(r["mode"] == std::string("evaluate_") + voting);
    bacc[i++] = r["bacc"].get<double>();
  }
  CHECK(bacc[1] >= bacc[0] + 0.03);
}
