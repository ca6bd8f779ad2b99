// SPDX-License-Identifier: Apache-2.0
#include "nvk/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"
#include "nvk/error.hpp"
#include "nvk/image.hpp"
#include "nvk/logging.hpp"
#include "nvk/model.hpp"
#include "nvk/viz.hpp"

namespace nvk {

using json = nlohmann::ordered_json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::uint64_t config_seed(const ConfigFile& config, const std::string& section) {
  return static_cast<std::uint64_t>(config.get_int(section, "seed", 0));
}

std::array<double, 3> parse_ratios(const std::string& text) {
  std::array<double, 3> r{};
  std::stringstream ss(text);
  std::string part;
  std::size_t n = 0;
  while (std::getline(ss, part, ',')) {
    if (n == 3) break;
    try {
      r[n] = std::stod(part);
    } catch (const std::exception&) {
      throw ConfigError("ratios expect three numbers, got '" + text + "'");
    }
    ++n;
  }
  const double total = r[0] + r[1] + r[2];
  if (n != 3 || std::getline(ss, part, ',') || !(total > 0) || r[0] < 0 || r[1] < 0 || r[2] < 0) {
    throw ConfigError("ratios expect three non-negative numbers, got '" + text + "'");
  }
  for (auto& v : r) v /= total;
  return r;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string file_sha256(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

fs::path write_manifest(const fs::path& out_dir, const std::string& command, const ConfigFile& config,
                        std::uint64_t seed, const std::vector<fs::path>& artifacts) {
  json m;
  m["command"] = command;
  m["config_sha256"] = sha256_hex(config.canonical());
  m["seed"] = seed;
  json files = json::object();
  for (const auto& a : artifacts) files[fs::relative(a, out_dir).generic_string()] = file_sha256(a);
  m["artifacts"] = files;
  const fs::path path = out_dir / "manifest.json";
  write_text(path, m.dump(2) + "\n");
  return path;
}

// ---- pretraining ----

std::vector<Tensor> pretrain_images(const ConfigFile& config) {
  std::vector<Tensor> images;
  const std::string dir = config.get("data", "images", "");
  if (!dir.empty()) {
    for (const auto& p : list_images(dir)) images.push_back(to_tensor(read_image(p)));
    if (images.empty()) throw IoError("no PNG or PPM images in " + dir);
    return images;
  }
  const long count = config.get_int("data", "synthetic_images", 64);
  const long size = config.get_int("data", "synthetic_size", 48);
  if (count <= 0 || size <= 0) throw ConfigError("data.synthetic_images and data.synthetic_size must be positive");
  for (auto& item : texture_corpus(static_cast<std::size_t>(count), static_cast<std::size_t>(size),
                                   config_seed(config, "data"))
                        .items) {
    images.push_back(std::move(item.image));
  }
  return images;
}

std::string format_step_log(const std::vector<StepLog>& steps) {
  std::string out = "step,loss,lr,weight_decay,teacher_temp,momentum,teacher_entropy,grad_norm,skipped\n";
  for (const auto& s : steps) {
    out += std::to_string(s.step) + "," + format_double(s.loss) + "," + format_double(s.sched.lr) + "," +
           format_double(s.sched.weight_decay) + "," + format_double(s.sched.teacher_temp) + "," +
           format_double(s.sched.momentum) + "," + format_double(s.teacher_entropy) + "," +
           format_double(s.grad_norm) + "," + (s.skipped ? "1" : "0") + "\n";
  }
  return out;
}

PretrainResult run_pretrain(const ConfigFile& config, const fs::path& out_dir, const std::optional<fs::path>& resume) {
  const DinoConfig dino = DinoConfig::from_config(config);
  const long every = config.get_int("dino", "checkpoint_every", 10);
  if (every < 0) throw ConfigError("dino.checkpoint_every must be non-negative");
  ensure_dir(out_dir);

  const std::string init = config.get("model", "init", "");
  auto backbone = build_backbone(config, init.empty() ? std::nullopt : std::optional<fs::path>(init));
  DinoState state = DinoState::create(std::move(backbone), dino);
  if (resume) state.restore(load_archive(*resume));

  const auto images = pretrain_images(config);
  const std::size_t spe = steps_per_epoch(images.size(), dino);
  const std::size_t first_epoch = state.step / spe;

  PretrainResult result;
  result.log = out_dir / "train_log.csv";
  std::vector<fs::path> artifacts;
  auto record = [&](const StepLog& log) { result.steps.push_back(log); };
  try {
    for (std::size_t e = first_epoch; e < dino.epochs; ++e) {
      result.epochs.push_back(train_epoch(images, state, dino, e, record));
      const std::size_t done = e + 1;
      if (every > 0 && done % static_cast<std::size_t>(every) == 0) {
        const fs::path ckpt = out_dir / ("ckpt_epoch" + std::to_string(done) + ".nvk");
        save_archive(ckpt, state.checkpoint());
        artifacts.push_back(ckpt);
      }
    }
  } catch (const NumericalAbort&) {
    write_text(result.log, format_step_log(result.steps));
    throw;
  }
  write_text(result.log, format_step_log(result.steps));
  result.checkpoint = out_dir / "checkpoint.nvk";
  save_archive(result.checkpoint, state.checkpoint());
  artifacts.push_back(result.checkpoint);
  artifacts.push_back(result.log);
  result.manifest = write_manifest(out_dir, "pretrain", config, dino.seed, artifacts);
  return result;
}

// ---- supervised evaluation ----

SupervisedData load_supervised(const ConfigFile& config) {
  const std::string labels = config.get("data", "labels", "");
  if (labels.empty()) throw ConfigError("data.labels must name a path,task,label CSV");
  LabeledDataset all = LabeledDataset::load_csv(labels);
  std::string task = config.get("data", "task", "");
  if (task.empty()) {
    const auto tasks = all.tasks();
    if (tasks.size() != 1) throw ConfigError("data.task is required when the labels hold several tasks");
    task = tasks.front();
  }
  SupervisedData data;
  data.task = task;
  data.dataset = all.with_task(task);
  if (data.dataset.size() == 0) throw ConfigError("no records carry task '" + task + "'");
  const std::string split = config.get("data", "split", "");
  if (!split.empty()) {
    data.split = SplitManifest::load_csv(split, data.dataset);
    data.split.task = task;
  } else {
    const auto ratios = parse_ratios(config.get("data", "ratios", "75,10,15"));
    const auto seed = static_cast<std::uint64_t>(config.get_int("data", "split_seed", 0));
    data.split = stratified_split(data.dataset, task, ratios, seed);
  }
  return data;
}

std::unique_ptr<Backbone> build_backbone(const ConfigFile& config, const std::optional<fs::path>& checkpoint) {
  const ModelConfig mc = ModelConfig::from_config(config);
  Rng rng(Rng::derive(static_cast<std::uint64_t>(config.get_int("model", "seed", 0)), {0xbb}));
  auto backbone = make_backbone(mc, rng);
  if (checkpoint) load_backbone(*backbone, load_archive(*checkpoint));
  return backbone;
}

void save_classifier(const fs::path& path, const Classifier& model) {
  ParamList entries = model.parameters();
  std::vector<float> classes;
  for (int c : model.classes()) classes.push_back(static_cast<float>(c));
  entries.push_back({"cls_head.classes", Tensor::from({classes.size()}, classes)});
  save_archive(path, entries);
}

Classifier load_classifier(const fs::path& path, const ConfigFile& config) {
  const ParamList archive = load_archive(path);
  const NamedTensor* cls = find_entry(archive, "cls_head.classes");
  if (!cls) throw CheckpointError(path.string() + " is not a classifier checkpoint (no cls_head.classes)");
  std::vector<int> classes;
  for (float v : cls->tensor.data()) classes.push_back(static_cast<int>(std::lround(v)));
  Rng rng(0);
  Classifier model(build_backbone(config, std::nullopt), classes, rng);
  ParamList target = model.parameters();
  assign_params(target, archive);
  return model;
}

std::string results_json(const std::string& task, const std::string& mode, const MetricReport& report,
                         std::uint64_t seed, const std::string& checkpoint) {
  json j;
  j["task"] = task;
  j["mode"] = mode;
  j["acc"] = report.accuracy;
  j["bacc"] = report.balanced_accuracy;
  j["f1"] = report.f1();
  j["f1_kind"] = report.positive_class ? "binary" : "macro";
  j["classes"] = report.classes;
  j["confusion"] = report.confusion;
  j["seed"] = seed;
  j["ckpt"] = checkpoint;
  return j.dump(2) + "\n";
}

SupervisedRun run_supervised(const ConfigFile& config, const fs::path& out_dir,
                             const std::optional<fs::path>& backbone_checkpoint) {
  const ProbeConfig pc = ProbeConfig::from_config(config);
  SupervisedData data = load_supervised(config);
  ensure_dir(out_dir);

  Rng head_rng(Rng::derive(pc.seed, {0xc1a5}));
  Classifier model(build_backbone(config, backbone_checkpoint), data.dataset.alphabet(data.task), head_rng);
  ImageStore store;

  SupervisedRun run;
  run.metrics = out_dir / "metrics.csv";
  std::string csv = "epoch,train_loss,val_acc,val_bacc,val_f1\n";
  auto on_epoch = [&](const EpochLog& log) {
    csv += std::to_string(log.epoch) + "," + format_double(log.train_loss);
    if (log.val) {
      csv += "," + format_double(log.val->accuracy) + "," + format_double(log.val->balanced_accuracy) + "," +
             format_double(log.val->f1());
    } else {
      csv += ",,,";
    }
    csv += "\n";
  };
  run.result = pc.mode == ProbeMode::linear_probe
                   ? linear_probe(model, data.dataset, data.split, data.task, store, pc, on_epoch)
                   : finetune(model, data.dataset, data.split, data.task, store, pc, on_epoch);
  write_text(run.metrics, csv);
  run.model = out_dir / "classifier.nvk";
  save_classifier(run.model, model);
  run.results = out_dir / "results.json";
  write_text(run.results, results_json(data.task, to_string(pc.mode), run.result.test, pc.seed,
                                       backbone_checkpoint ? backbone_checkpoint->string() : std::string()));
  run.manifest = write_manifest(out_dir, to_string(pc.mode), config, pc.seed, {run.model, run.metrics, run.results});
  return run;
}

MetricReport run_evaluate(const ConfigFile& config, const fs::path& classifier_path, const fs::path& out_dir) {
  const ProbeConfig pc = ProbeConfig::from_config(config);
  SupervisedData data = load_supervised(config);
  ensure_dir(out_dir);
  Classifier model = load_classifier(classifier_path, config);
  ImageStore store;
  MetricReport report = evaluate(model, data.dataset, data.split.indices(Split::test), data.task, store, pc);
  const fs::path results = out_dir / "results.json";
  write_text(results, results_json(data.task, "evaluate_" + to_string(pc.voting), report, pc.seed,
                                   classifier_path.string()));
  write_manifest(out_dir, "evaluate", config, pc.seed, {results});
  return report;
}

// ---- visualization ----

std::vector<fs::path> run_visualize(const ConfigFile& config, const fs::path& checkpoint, const fs::path& image,
                                    std::optional<std::size_t> layer, double q, const fs::path& out_dir) {
  auto backbone = build_backbone(config, checkpoint);
  ensure_dir(out_dir);
  const std::vector<float> mean{static_cast<float>(config.get_double("data", "mean", 0.5))};
  const std::vector<float> std{static_cast<float>(config.get_double("data", "std", 0.5))};
  const AttentionOverlay overlay = build_overlay(*backbone, read_image(image), layer, q, mean, std);
  const auto written = write_overlay(overlay, out_dir / (image.stem().string() + "_attn.png"));
  std::vector<fs::path> out(written.begin(), written.end());
  write_manifest(out_dir, "visualize", config, 0, out);
  return out;
}

// ---- splits ----

SplitManifest run_split(const ConfigFile& config, const fs::path& out_dir) {
  ensure_dir(out_dir);
  const auto seed = static_cast<std::uint64_t>(config.get_int("data", "split_seed", 0));
  LabeledDataset dataset;
  std::string task = config.get("data", "task", "");
  std::array<double, 3> ratios{0.75, 0.10, 0.15};
  if (config.has("data", "labels")) {
    SupervisedData data = load_supervised(config);
    dataset = std::move(data.dataset);
    task = data.task;
    if (config.has("data", "ratios")) ratios = parse_ratios(config.get("data", "ratios", ""));
  } else {
    const TaskCounts* counts = nullptr;
    for (const auto& tc : benchmark_task_counts()) {
      if (tc.task == task) counts = &tc;
    }
    if (!counts) throw ConfigError("unknown benchmark task '" + task + "' (streetlight, nsh, green30, sidewalk)");
    dataset = counts_dataset(*counts);
    ratios = config.has("data", "ratios") ? parse_ratios(config.get("data", "ratios", "")) : counts->ratios;
  }
  SplitManifest split = stratified_split(dataset, task, ratios, seed);
  const fs::path manifest_csv = out_dir / ("split_" + task + ".csv");
  split.save_csv(manifest_csv, dataset);
  std::string counts = "class,train,val,test\n";
  for (const auto& [cls, c] : split.class_counts(dataset)) {
    counts += std::to_string(cls) + "," + std::to_string(c[0]) + "," + std::to_string(c[1]) + "," +
              std::to_string(c[2]) + "\n";
  }
  const fs::path counts_csv = out_dir / ("split_" + task + "_counts.csv");
  write_text(counts_csv, counts);
  write_manifest(out_dir, "split", config, seed, {manifest_csv, counts_csv});
  return split;
}

// ---- synthetic corpora ----

namespace {

std::string numbered(const std::string& stem, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return stem + buf + ".png";
}

}  // namespace

SynthCorpus texture_corpus(std::size_t count, std::size_t size, std::uint64_t seed) {
  SynthCorpus c;
  Rng rng(Rng::derive(seed, {0x7e47}));
  for (std::size_t i = 0; i < count; ++i) {
    c.items.push_back({numbered("tex_", i), texture_family_image(size, size, i % kTextureFamilies, rng), {}});
  }
  return c;
}

SynthCorpus bright_dark_corpus(std::size_t count, std::size_t size, std::uint64_t seed) {
  SynthCorpus c;
  c.task = "tone";
  Rng rng(Rng::derive(seed, {0xb7d4}));
  for (std::size_t i = 0; i < count; ++i) {
    const bool bright = i % 2 == 1;
    c.items.push_back({numbered(bright ? "bright_" : "dark_", i), bright_dark_image(size, size, bright, rng),
                       bright ? 1 : 0});
  }
  return c;
}

PlantedCorpus planted_corpus(std::size_t scenes, const PlantedSpec& spec, std::size_t crop_h, std::size_t crop_w,
                             double visible_threshold, std::uint64_t seed) {
  PlantedCorpus c;
  c.scenes.task = c.crops.task = "object";
  Rng rng(Rng::derive(seed, {0x9a47}));
  const auto corners = four_crop_windows(spec.height, spec.width, crop_h, crop_w);
  const std::size_t side = std::min(spec.height, spec.width);
  const CropWindow centre{(spec.height - side) / 2, (spec.width - side) / 2, side, side};
  for (std::size_t i = 0; i < scenes; ++i) {
    const bool positive = i % 2 == 0;
    PlantedScene scene = planted_scene(spec, positive, rng);
    const std::string stem = numbered("scene_", i);
    c.scenes.items.push_back({stem, scene.image, positive ? 1 : 0});
    std::vector<CropWindow> windows(corners.begin(), corners.end());
    windows.push_back(centre);
    const std::string base = stem.substr(0, stem.size() - 4);
    for (std::size_t k = 0; k < windows.size(); ++k) {
      const auto& w = windows[k];
      const bool visible = positive && visible_fraction(scene.object, w) >= visible_threshold;
      c.crops.items.push_back({base + "_w" + std::to_string(k) + ".png",
                               crop(scene.image, w.top, w.left, w.height, w.width), visible ? 1 : 0});
    }
  }
  return c;
}

LabeledDataset register_corpus(const SynthCorpus& corpus, ImageStore& store, const std::string& prefix) {
  LabeledDataset ds;
  for (const auto& item : corpus.items) {
    const std::string key = prefix + "/" + item.name;
    store.put(key, item.image);
    if (item.label) ds.add(key, corpus.task, *item.label);
  }
  return ds;
}

std::vector<fs::path> write_corpus(const SynthCorpus& corpus, const fs::path& dir) {
  ensure_dir(dir);
  std::vector<fs::path> written;
  LabeledDataset labels;
  for (const auto& item : corpus.items) {
    const fs::path p = dir / item.name;
    write_png(p, to_image8(item.image));
    written.push_back(p);
    if (item.label) labels.add(item.name, corpus.task, *item.label);
  }
  if (!corpus.task.empty()) {
    labels.save_csv(dir / "labels.csv");
    written.push_back(dir / "labels.csv");
  }
  return written;
}

}  // namespace nvk
