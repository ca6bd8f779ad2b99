// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "nvk/error.hpp"
#include "nvk/pipeline.hpp"

namespace {

using nvk::ConfigFile;
namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::string out;
  std::optional<long> seed;
  std::optional<long> epochs;
  std::optional<long> workers;
  std::string ckpt;
  std::string resume;
  std::string voting;
  std::string framing;
  std::string task;
  std::string ratios;
  std::string labels;
  std::string image;
  std::optional<long> layer;
  double q = 0.2;
  std::string kind = "texture";
  long count = 64;
  long size = 48;
};

ConfigFile load_config(const Options& o) { return o.config.empty() ? ConfigFile{} : ConfigFile::load(o.config); }

void set_if(ConfigFile& cfg, const std::string& section, const std::string& key, const std::string& value) {
  if (!value.empty()) cfg.set(section, key, value);
}

void set_if(ConfigFile& cfg, const std::string& section, const std::string& key, const std::optional<long>& value) {
  if (value) cfg.set(section, key, std::to_string(*value));
}

/// Applies the flags shared by the supervised commands.
void apply_data_flags(ConfigFile& cfg, const Options& o) {
  set_if(cfg, "data", "labels", o.labels);
  set_if(cfg, "data", "task", o.task);
  set_if(cfg, "data", "ratios", o.ratios);
  set_if(cfg, "eval", "voting", o.voting);
  set_if(cfg, "eval", "framing", o.framing);
  set_if(cfg, "eval", "seed", o.seed);
  set_if(cfg, "dino", "workers", o.workers);
}

fs::path out_dir(const Options& o, const std::string& command) {
  return o.out.empty() ? fs::path("runs") / command : fs::path(o.out);
}

void print_report(const nvk::MetricReport& r) {
  std::printf("acc %.4f  bacc %.4f  f1 %.4f  n %zu\n", r.accuracy, r.balanced_accuracy, r.f1(), r.total);
}

int run_pretrain(const Options& o) {
  ConfigFile cfg = load_config(o);
  set_if(cfg, "dino", "epochs", o.epochs);
  set_if(cfg, "dino", "seed", o.seed);
  set_if(cfg, "dino", "workers", o.workers);
  const auto result = nvk::run_pretrain(cfg, out_dir(o, "pretrain"),
                                        o.resume.empty() ? std::nullopt : std::optional<fs::path>(o.resume));
  std::size_t skipped = 0;
  for (const auto& s : result.steps) skipped += s.skipped ? 1 : 0;
  std::printf("%zu steps (%zu skipped); checkpoint %s\n", result.steps.size(), skipped,
              result.checkpoint.string().c_str());
  if (!result.steps.empty()) {
    const auto& last = result.steps.back();
    std::printf("last loss %.6f  teacher entropy %.4f\n", last.loss, last.teacher_entropy);
  }
  return 0;
}

int run_supervised(const Options& o, const std::string& mode) {
  ConfigFile cfg = load_config(o);
  cfg.set("eval", "mode", mode);
  set_if(cfg, "eval", "epochs", o.epochs);
  apply_data_flags(cfg, o);
  const auto run = nvk::run_supervised(cfg, out_dir(o, mode == "linear_probe" ? "probe" : "finetune"),
                                       o.ckpt.empty() ? std::nullopt : std::optional<fs::path>(o.ckpt));
  print_report(run.result.test);
  std::printf("results %s\n", run.results.string().c_str());
  return 0;
}

int run_evaluate(const Options& o) {
  ConfigFile cfg = load_config(o);
  apply_data_flags(cfg, o);
  print_report(nvk::run_evaluate(cfg, o.ckpt, out_dir(o, "evaluate")));
  return 0;
}

int run_visualize(const Options& o) {
  ConfigFile cfg = load_config(o);
  std::optional<std::size_t> layer;
  if (o.layer) {
    if (*o.layer < 0) throw nvk::ConfigError("--layer must be non-negative");
    layer = static_cast<std::size_t>(*o.layer);
  }
  for (const auto& p : nvk::run_visualize(cfg, o.ckpt, o.image, layer, o.q, out_dir(o, "visualize"))) {
    std::printf("wrote %s\n", p.string().c_str());
  }
  return 0;
}

int run_split(const Options& o) {
  ConfigFile cfg = load_config(o);
  set_if(cfg, "data", "labels", o.labels);
  set_if(cfg, "data", "task", o.task);
  set_if(cfg, "data", "ratios", o.ratios);
  set_if(cfg, "data", "split_seed", o.seed);
  const fs::path dir = out_dir(o, "split");
  nvk::run_split(cfg, dir);
  std::printf("wrote split_%s.csv into %s\n", cfg.get("data", "task", "").c_str(), dir.string().c_str());
  return 0;
}

int run_synth(const Options& o) {
  ConfigFile cfg = load_config(o);
  const auto seed = static_cast<std::uint64_t>(o.seed.value_or(0));
  if (o.count <= 0 || o.size <= 0) throw nvk::ConfigError("--count and --size must be positive");
  const auto count = static_cast<std::size_t>(o.count);
  const auto size = static_cast<std::size_t>(o.size);
  const fs::path dir = out_dir(o, "synth");
  std::vector<fs::path> files;
  auto add = [&](const std::vector<fs::path>& more) { files.insert(files.end(), more.begin(), more.end()); };
  if (o.kind == "texture") {
    add(nvk::write_corpus(nvk::texture_corpus(count, size, seed), dir));
  } else if (o.kind == "bright-dark") {
    add(nvk::write_corpus(nvk::bright_dark_corpus(count, size, seed), dir));
  } else if (o.kind == "planted") {
    const nvk::PlantedSpec spec;
    const auto crop_h = static_cast<std::size_t>(cfg.get_int("eval", "crop_h", 64));
    const auto crop_w = static_cast<std::size_t>(cfg.get_int("eval", "crop_w", 93));
    const auto corpus = nvk::planted_corpus(count, spec, crop_h, crop_w, 0.5, seed);
    add(nvk::write_corpus(corpus.scenes, dir / "scenes"));
    add(nvk::write_corpus(corpus.crops, dir / "crops"));
  } else {
    throw nvk::ConfigError("unknown --kind '" + o.kind + "' (texture, bright-dark, planted)");
  }
  nvk::write_manifest(dir, "synth-data", cfg, seed, files);
  std::printf("wrote %zu files into %s\n", files.size(), dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nvk: vision backbones, self-distillation and street-view evaluation"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "config file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output folder (default runs/<command>)");
    sub->add_option("--seed", o.seed, "seed override");
    sub->add_option("--workers", o.workers, "worker threads");
  };
  auto data_flags = [&](CLI::App* sub) {
    sub->add_option("--labels", o.labels, "path,task,label CSV");
    sub->add_option("--task", o.task, "task name");
    sub->add_option("--ratios", o.ratios, "train,val,test ratios, e.g. 75,10,15");
  };
  auto eval_flags = [&](CLI::App* sub) {
    sub->add_option("--voting", o.voting, "single_crop or four_crop");
    sub->add_option("--framing", o.framing, "center or squash");
  };

  auto* pretrain = app.add_subcommand("pretrain", "self-distillation pretraining");
  common(pretrain);
  pretrain->add_option("--epochs", o.epochs, "epochs override");
  pretrain->add_option("--resume", o.resume, "training-state checkpoint to resume")->check(CLI::ExistingFile);

  auto* finetune = app.add_subcommand("finetune", "fine-tune backbone and head");
  auto* probe = app.add_subcommand("probe", "linear probe on a frozen backbone");
  for (auto* sub : {finetune, probe}) {
    common(sub);
    data_flags(sub);
    eval_flags(sub);
    sub->add_option("--epochs", o.epochs, "epochs override");
    sub->add_option("--ckpt", o.ckpt, "backbone checkpoint")->check(CLI::ExistingFile);
  }

  auto* evaluate = app.add_subcommand("evaluate", "test metrics of a saved classifier");
  common(evaluate);
  data_flags(evaluate);
  eval_flags(evaluate);
  evaluate->add_option("--ckpt", o.ckpt, "classifier checkpoint")->required()->check(CLI::ExistingFile);

  auto* visualize = app.add_subcommand("visualize", "class-token attention overlay");
  common(visualize);
  visualize->add_option("--ckpt", o.ckpt, "backbone or classifier checkpoint")->required()->check(CLI::ExistingFile);
  visualize->add_option("--image", o.image, "PNG or PPM image")->required()->check(CLI::ExistingFile);
  visualize->add_option("--layer", o.layer, "layer index (default last)");
  visualize->add_option("--q", o.q, "share of patches kept")->check(CLI::Range(0.0, 1.0));

  auto* split = app.add_subcommand("split", "stratified train/val/test split");
  common(split);
  data_flags(split);

  auto* synth = app.add_subcommand("synth-data", "deterministic synthetic corpora");
  common(synth);
  synth->add_option("--kind", o.kind, "texture, bright-dark or planted");
  synth->add_option("--count", o.count, "images (scenes for planted)");
  synth->add_option("--size", o.size, "side length (texture and bright-dark)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* failed = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << failed->help();
    return 1;
  }

  try {
    if (pretrain->parsed()) return run_pretrain(o);
    if (finetune->parsed()) return run_supervised(o, "finetune");
    if (probe->parsed()) return run_supervised(o, "linear_probe");
    if (evaluate->parsed()) return run_evaluate(o);
    if (visualize->parsed()) return run_visualize(o);
    if (split->parsed()) return run_split(o);
    if (synth->parsed()) return run_synth(o);
  } catch (const nvk::NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
