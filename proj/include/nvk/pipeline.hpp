// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nvk/config.hpp"
#include "nvk/dino.hpp"
#include "nvk/eval.hpp"
#include "nvk/synth.hpp"

/// End-to-end workflows behind the command-line tool. Every run writes its
/// artifacts into one output folder plus a `manifest.json` holding the
/// command, the SHA-256 of the canonical config, the seed and the SHA-256 of
/// every artifact.
namespace nvk {

namespace fs = std::filesystem;

std::string file_sha256(const fs::path& path);

/// Writes `<out_dir>/manifest.json`; artifact paths are stored relative to `out_dir`.
fs::path write_manifest(const fs::path& out_dir, const std::string& command, const ConfigFile& config,
                        std::uint64_t seed, const std::vector<fs::path>& artifacts);

// ---- pretraining ----

/// Unlabeled images for self-distillation: every image in `[data] images`
/// when set, otherwise `[data] synthetic_images` texture-family images of
/// `[data] synthetic_size` pixels generated from `[data] seed`.
std::vector<Tensor> pretrain_images(const ConfigFile& config);

struct PretrainResult {
  std::vector<StepLog> steps;
  std::vector<EpochStats> epochs;
  fs::path checkpoint;  // final state
  fs::path log;         // per-step CSV
  fs::path manifest;
};

/// Self-distillation run. Starts from `[model] init` backbone weights when
/// given, or resumes a full training state from `resume` (step counter,
/// teacher, center and optimizer included). Writes `ckpt_epoch{N}.nvk` every
/// `[dino] checkpoint_every` epochs, `checkpoint.nvk`, `train_log.csv` and
/// the manifest. With zero epochs the checkpoint holds the initial state.
PretrainResult run_pretrain(const ConfigFile& config, const fs::path& out_dir,
                            const std::optional<fs::path>& resume = std::nullopt);

/// Per-step CSV: step,loss,lr,weight_decay,teacher_temp,momentum,teacher_entropy,grad_norm,skipped.
std::string format_step_log(const std::vector<StepLog>& steps);

// ---- supervised evaluation ----

struct SupervisedData {
  LabeledDataset dataset;  // records of the task only
  SplitManifest split;
  std::string task;
};

/// Reads `[data] labels` (CSV), `[data] task`, and `[data] split` when given;
/// otherwise splits with `[data] ratios` ("75,10,15" style, default 75:10:15)
/// and `[data] split_seed`.
SupervisedData load_supervised(const ConfigFile& config);

/// Backbone from `[model]`, with weights from `checkpoint` when given.
std::unique_ptr<Backbone> build_backbone(const ConfigFile& config, const std::optional<fs::path>& checkpoint);

/// Backbone, head and class list ("cls_head.classes") in one archive.
void save_classifier(const fs::path& path, const Classifier& model);
Classifier load_classifier(const fs::path& path, const ConfigFile& config);

struct SupervisedRun {
  ProbeResult result;
  fs::path model;
  fs::path results;
  fs::path metrics;
  fs::path manifest;
};

/// Fine-tuning or linear probing per `[eval] mode`. Writes `classifier.nvk`,
/// `metrics.csv` (one row per epoch), `results.json` and the manifest.
SupervisedRun run_supervised(const ConfigFile& config, const fs::path& out_dir,
                             const std::optional<fs::path>& backbone_checkpoint);

/// Test-split metrics of a saved classifier under `[eval] voting` and
/// `framing`. Writes `results.json` and the manifest.
MetricReport run_evaluate(const ConfigFile& config, const fs::path& classifier_path, const fs::path& out_dir);

/// `{task, mode, acc, bacc, f1, confusion, seed, ckpt}`.
std::string results_json(const std::string& task, const std::string& mode, const MetricReport& report,
                         std::uint64_t seed, const std::string& checkpoint);

// ---- visualization ----

/// Attention overlay of one image: writes `<stem>_attn.png` and
/// `<stem>_attn_heads.png` into `out_dir` plus the manifest.
std::vector<fs::path> run_visualize(const ConfigFile& config, const fs::path& checkpoint, const fs::path& image,
                                    std::optional<std::size_t> layer, double q, const fs::path& out_dir);

// ---- splits ----

/// Split of `[data] labels`, or of the built-in benchmark class counts when
/// no labels file is configured. Writes `split_<task>.csv`,
/// `split_<task>_counts.csv` (class,train,val,test) and the manifest.
SplitManifest run_split(const ConfigFile& config, const fs::path& out_dir);

// ---- synthetic corpora ----

struct SynthItem {
  std::string name;  // relative path, ".png"
  Tensor image;
  std::optional<int> label;
};

struct SynthCorpus {
  std::string task;  // empty for unlabeled corpora
  std::vector<SynthItem> items;
};

/// `count` texture-family images (unlabeled).
SynthCorpus texture_corpus(std::size_t count, std::size_t size, std::uint64_t seed);
/// Bright (1) and dark (0) textures, alternating; task "tone".
SynthCorpus bright_dark_corpus(std::size_t count, std::size_t size, std::uint64_t seed);

struct PlantedCorpus {
  SynthCorpus scenes;  // task "object": 1 when a red square is planted
  SynthCorpus crops;   // task "object": corner crops and centre squares labelled by visibility
};

/// Wide scenes (positives alternate with negatives) and a crop-level
/// training set cut from them: the four corner crops and the centred square
/// of each scene, positive when at least `visible_threshold` of the object
/// lies inside the window.
PlantedCorpus planted_corpus(std::size_t scenes, const PlantedSpec& spec, std::size_t crop_h, std::size_t crop_w,
                             double visible_threshold, std::uint64_t seed);

/// Registers every item in `store` under `prefix/name` and returns the
/// matching dataset (labels only for labeled corpora).
LabeledDataset register_corpus(const SynthCorpus& corpus, ImageStore& store, const std::string& prefix);

/// Writes the images as PNG and, for labeled corpora, `labels.csv`.
std::vector<fs::path> write_corpus(const SynthCorpus& corpus, const fs::path& dir);

}  // namespace nvk
