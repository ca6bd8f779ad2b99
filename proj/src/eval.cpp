// SPDX-License-Identifier: Apache-2.0
#include "nvk/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nvk/error.hpp"
#include "nvk/ops.hpp"
#include "nvk/optim.hpp"

namespace nvk {

Classifier::Classifier(std::unique_ptr<Backbone> backbone, std::vector<int> classes, Rng& rng)
    : backbone_(std::move(backbone)), classes_(std::move(classes)) {
  if (classes_.size() < 2) throw ContractError("a classifier needs at least two classes");
  const std::size_t D = backbone_->embed_dim();
  head_w_ = trunc_normal_param({D, classes_.size()}, 0.01, rng);
  head_b_ = constant_param({classes_.size()}, 0.0f);
}

Tensor Classifier::features(const Tensor& image) const { return backbone_->forward(image); }

Tensor Classifier::head_logits(const Tensor& features) const {
  return ops::add(ops::matmul(features, head_w_), head_b_);
}

Tensor Classifier::logits(const std::vector<Tensor>& images) const {
  if (images.empty()) throw ContractError("Classifier::logits needs at least one image");
  const std::size_t D = backbone_->embed_dim();
  std::vector<Tensor> rows;
  rows.reserve(images.size());
  for (const auto& img : images) rows.push_back(ops::reshape(features(img), {1, D}));
  return head_logits(rows.size() == 1 ? rows.front() : ops::concat(rows, 0));
}

std::vector<double> Classifier::probabilities(const Tensor& image) const {
  NoGradGuard no_grad;
  Tensor p = ops::softmax(logits({image}));
  return {p.data().begin(), p.data().end()};
}

ParamList Classifier::head_parameters() const { return {{"cls_head.w", head_w_}, {"cls_head.b", head_b_}}; }

ParamList Classifier::parameters() const {
  ParamList p = backbone_->parameters();
  p.push_back({"cls_head.w", head_w_});
  p.push_back({"cls_head.b", head_b_});
  return p;
}

std::size_t Classifier::class_index(int label) const {
  auto it = std::find(classes_.begin(), classes_.end(), label);
  if (it == classes_.end()) throw ContractError("label " + std::to_string(label) + " is not one of the model's classes");
  return static_cast<std::size_t>(it - classes_.begin());
}

std::string to_string(ProbeMode m) { return m == ProbeMode::finetune ? "finetune" : "linear_probe"; }
std::string to_string(Voting v) { return v == Voting::single_crop ? "single_crop" : "four_crop"; }

ProbeMode parse_probe_mode(const std::string& s) {
  if (s == "finetune") return ProbeMode::finetune;
  if (s == "linear_probe" || s == "probe") return ProbeMode::linear_probe;
  throw ConfigError("unknown mode '" + s + "' (expected finetune or linear_probe)");
}

Voting parse_voting(const std::string& s) {
  if (s == "single_crop") return Voting::single_crop;
  if (s == "four_crop") return Voting::four_crop;
  throw ConfigError("unknown voting '" + s + "' (expected single_crop or four_crop)");
}

Framing parse_framing(const std::string& s) {
  if (s == "center") return Framing::center;
  if (s == "squash") return Framing::squash;
  throw ConfigError("unknown framing '" + s + "' (expected center or squash)");
}

ProbeConfig ProbeConfig::from_config(const ConfigFile& cfg) {
  ProbeConfig c;
  const std::string s = "eval";
  c.mode = parse_probe_mode(cfg.get(s, "mode", to_string(c.mode)));
  const long epochs = cfg.get_int(s, "epochs", static_cast<long>(c.epochs));
  if (epochs < 0) throw ConfigError("eval.epochs must be non-negative");
  c.epochs = static_cast<std::size_t>(epochs);
  c.lr = cfg.get_double(s, "lr", c.lr);
  c.min_lr = cfg.get_double(s, "min_lr", c.min_lr);
  c.weight_decay = cfg.get_double(s, "weight_decay", c.weight_decay);
  const long batch = cfg.get_int(s, "batch_size", static_cast<long>(c.batch_size));
  if (batch <= 0) throw ConfigError("eval.batch_size must be positive");
  c.batch_size = static_cast<std::size_t>(batch);
  c.balanced_sampling = cfg.get_bool(s, "balanced_sampling", c.balanced_sampling);
  c.voting = parse_voting(cfg.get(s, "voting", to_string(c.voting)));
  c.framing = parse_framing(cfg.get(s, "framing", "center"));
  c.augment = cfg.get_bool(s, "augment", c.augment);
  c.crop_h = static_cast<std::size_t>(cfg.get_int(s, "crop_h", static_cast<long>(c.crop_h)));
  c.crop_w = static_cast<std::size_t>(cfg.get_int(s, "crop_w", static_cast<long>(c.crop_w)));
  if (cfg.has(s, "positive_class")) c.positive_class = static_cast<int>(cfg.get_int(s, "positive_class", 1));
  c.mean = {static_cast<float>(cfg.get_double("data", "mean", 0.5))};
  c.std = {static_cast<float>(cfg.get_double("data", "std", 0.5))};
  c.seed = static_cast<std::uint64_t>(cfg.get_int(s, "seed", 0));
  c.validate();
  return c;
}

void ProbeConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr >= 0 && min_lr >= 0 && weight_decay >= 0)) throw ConfigError("lr, min_lr and weight_decay must be non-negative");
  if (crop_h == 0 || crop_w == 0) throw ConfigError("crop size must be positive");
}

namespace {

AugmentSpec input_spec(const Backbone& backbone, const ProbeConfig& config) {
  AugmentSpec spec = eval_train_spec(backbone.geometry().image_h, backbone.geometry().image_w);
  spec.mean = config.mean;
  spec.std = config.std;
  return spec;
}

std::optional<int> positive_of(const Classifier& model, const ProbeConfig& config) {
  if (model.classes().size() != 2) return std::nullopt;
  return config.positive_class.value_or(model.classes().back());
}

std::size_t argmax(std::span<const float> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct Splits {
  std::vector<std::size_t> train, val, test;
  std::vector<std::size_t> train_targets;
};

Splits gather(const Classifier& model, const LabeledDataset& dataset, const SplitManifest& split,
              const std::string& task) {
  if (split.assignment.size() != dataset.size()) throw ContractError("split manifest does not cover the dataset");
  Splits s;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto label = dataset.label(i, task);
    if (!label) continue;
    model.class_index(*label);
    switch (split.assignment[i]) {
      case Split::train:
        s.train.push_back(i);
        s.train_targets.push_back(model.class_index(*label));
        break;
      case Split::val: s.val.push_back(i); break;
      case Split::test: s.test.push_back(i); break;
    }
  }
  if (s.train.empty()) throw ContractError("no labelled training records for task '" + task + "'");
  return s;
}

std::vector<int> labels_of(const LabeledDataset& dataset, const std::vector<std::size_t>& indices, const std::string& task) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(*dataset.label(i, task));
  return out;
}

double cosine_lr(const ProbeConfig& c, std::size_t step, std::size_t total) {
  if (total == 0) return c.lr;
  const double p = static_cast<double>(step) / static_cast<double>(total);
  return c.min_lr + 0.5 * (c.lr - c.min_lr) * (1.0 + std::cos(std::numbers::pi * p));
}

// Mini-batches of positions into the training list for one epoch.
std::vector<std::vector<std::size_t>> epoch_batches(const Splits& s, const ProbeConfig& c, std::size_t epoch) {
  const std::size_t n = s.train.size();
  const std::size_t bs = std::min(c.batch_size, n);
  const std::size_t spe = (n + bs - 1) / bs;
  std::vector<std::vector<std::size_t>> batches;
  if (c.balanced_sampling) {
    std::vector<std::size_t> positions(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      positions[i] = i;
      labels[i] = static_cast<int>(s.train_targets[i]);
    }
    BalancedSampler sampler(positions, labels, Rng::derive(c.seed, {0xba1, epoch}));
    for (std::size_t b = 0; b < spe; ++b) batches.push_back(sampler.next_batch(bs));
    return batches;
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(Rng::derive(c.seed, {0x5f1, epoch}));
  shuffle(order.begin(), order.end(), rng);
  for (std::size_t b = 0; b < spe; ++b) {
    const std::size_t lo = b * bs, hi = std::min(n, lo + bs);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  return batches;
}

std::vector<std::vector<float>> snapshot(const ParamList& params) {
  std::vector<std::vector<float>> out;
  for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

void restore(const ParamList& params, const std::vector<std::vector<float>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    std::copy(values[i].begin(), values[i].end(), t.mutable_data().begin());
  }
}

// Epoch loop shared by both modes. `step_loss` builds the loss of one batch
// of training positions; `validate` scores the current weights.
template <typename StepLoss, typename Validate>
ProbeResult run_training(const ParamList& trainable, const Splits& s, const ProbeConfig& config, StepLoss&& step_loss,
                         Validate&& validate, const EpochLogCallback& on_epoch) {
  ProbeResult result;
  AdamW opt(trainable);
  const std::size_t bs = std::min(config.batch_size, s.train.size());
  const std::size_t total = config.epochs * ((s.train.size() + bs - 1) / bs);
  std::size_t step = 0;
  double best = -1.0;
  std::vector<std::vector<float>> best_values;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0;
    const auto batches = epoch_batches(s, config, epoch);
    for (const auto& batch : batches) {
      Tensor loss = step_loss(batch, epoch, step);
      opt.zero_grad();
      loss.backward();
      opt.step(cosine_lr(config, step, total), config.weight_decay);
      opt.zero_grad();
      loss_sum += loss.item();
      ++step;
    }
    EpochLog log{epoch, loss_sum / static_cast<double>(batches.size()), std::nullopt};
    if (!s.val.empty()) {
      log.val = validate(s.val);
      if (log.val->balanced_accuracy > best) {
        best = log.val->balanced_accuracy;
        best_values = snapshot(trainable);
        result.best_epoch = epoch;
        result.best_val = log.val;
      }
    } else {
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(log);
    result.history.push_back(std::move(log));
  }
  if (!best_values.empty()) restore(trainable, best_values);
  return result;
}

}  // namespace

Tensor prepare_input(const Tensor& image, const Backbone& backbone, const ProbeConfig& config) {
  AugmentSpec spec = input_spec(backbone, config);
  return config.framing == Framing::center ? center_view(image, spec) : resize_view(image, spec);
}

bool vote_positive(std::span<const double> crop_probs, double threshold) {
  if (crop_probs.empty()) throw ContractError("vote needs at least one crop");
  return *std::max_element(crop_probs.begin(), crop_probs.end()) >= threshold;
}

VoteResult four_crop_vote(const Tensor& image, const Classifier& model, const ProbeConfig& config) {
  const auto positive = positive_of(model, config);
  if (!positive) throw ContractError("four-crop voting needs a binary task");
  const std::size_t pos = model.class_index(*positive);
  const std::size_t neg = 1 - pos;
  const AugmentSpec spec = input_spec(model.backbone(), config);
  const auto crops = four_overlapping_crops(image, config.crop_h, config.crop_w);
  VoteResult r{};
  for (std::size_t i = 0; i < 4; ++i) r.crop_probs[i] = model.probabilities(resize_view(crops[i], spec))[pos];
  r.positive_prob = *std::max_element(r.crop_probs.begin(), r.crop_probs.end());
  r.prediction = vote_positive(r.crop_probs) ? *positive : model.classes()[neg];
  return r;
}

std::vector<int> predict(const Classifier& model, const LabeledDataset& dataset, const std::vector<std::size_t>& indices,
                         ImageStore& store, const ProbeConfig& config) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    const Tensor& image = store.get(dataset.resolve(i).string());
    if (config.voting == Voting::four_crop) {
      out.push_back(four_crop_vote(image, model, config).prediction);
    } else {
      NoGradGuard no_grad;
      Tensor logits = model.logits({prepare_input(image, model.backbone(), config)});
      out.push_back(model.classes()[argmax(logits.data())]);
    }
  }
  return out;
}

MetricReport evaluate(const Classifier& model, const LabeledDataset& dataset, const std::vector<std::size_t>& indices,
                      const std::string& task, ImageStore& store, const ProbeConfig& config) {
  const auto preds = predict(model, dataset, indices, store, config);
  const auto labels = labels_of(dataset, indices, task);
  return compute_metrics(preds, labels, model.classes(), positive_of(model, config));
}

ProbeResult finetune(Classifier& model, const LabeledDataset& dataset, const SplitManifest& split,
                     const std::string& task, ImageStore& store, const ProbeConfig& config,
                     const EpochLogCallback& on_epoch) {
  config.validate();
  const Splits s = gather(model, dataset, split, task);
  const AugmentSpec train_spec = input_spec(model.backbone(), config);
  auto step_loss = [&](const std::vector<std::size_t>& batch, std::size_t epoch, std::size_t step) {
    std::vector<Tensor> inputs;
    std::vector<int> targets;
    for (std::size_t pos : batch) {
      const std::size_t i = s.train[pos];
      const Tensor& image = store.get(dataset.resolve(i).string());
      if (config.augment) {
        Rng rng(Rng::derive(config.seed, {0xa06, epoch, step, pos}));
        inputs.push_back(augment(image, train_spec, rng));
      } else {
        inputs.push_back(prepare_input(image, model.backbone(), config));
      }
      targets.push_back(static_cast<int>(s.train_targets[pos]));
    }
    return ops::cross_entropy(model.logits(inputs), targets);
  };
  auto validate = [&](const std::vector<std::size_t>& idx) { return evaluate(model, dataset, idx, task, store, config); };
  ProbeResult result = run_training(model.parameters(), s, config, step_loss, validate, on_epoch);
  result.test = evaluate(model, dataset, s.test, task, store, config);
  return result;
}

ProbeResult linear_probe(Classifier& model, const LabeledDataset& dataset, const SplitManifest& split,
                         const std::string& task, ImageStore& store, const ProbeConfig& config,
                         const EpochLogCallback& on_epoch) {
  config.validate();
  const Splits s = gather(model, dataset, split, task);
  const std::string before = params_digest(model.backbone().parameters());
  const std::size_t D = model.backbone().embed_dim();

  // Frozen features, computed once in inference mode.
  auto feature_rows = [&](const std::vector<std::size_t>& idx) {
    std::vector<float> rows;
    rows.reserve(idx.size() * D);
    NoGradGuard no_grad;
    for (auto i : idx) {
      Tensor f = model.features(prepare_input(store.get(dataset.resolve(i).string()), model.backbone(), config));
      rows.insert(rows.end(), f.data().begin(), f.data().end());
    }
    return rows;
  };
  const std::vector<float> train_rows = feature_rows(s.train);

  auto step_loss = [&](const std::vector<std::size_t>& batch, std::size_t, std::size_t) {
    std::vector<float> x;
    std::vector<int> targets;
    x.reserve(batch.size() * D);
    for (std::size_t pos : batch) {
      x.insert(x.end(), train_rows.begin() + static_cast<std::ptrdiff_t>(pos * D),
               train_rows.begin() + static_cast<std::ptrdiff_t>((pos + 1) * D));
      targets.push_back(static_cast<int>(s.train_targets[pos]));
    }
    return ops::cross_entropy(model.head_logits(Tensor::from({batch.size(), D}, std::move(x))), targets);
  };

  std::vector<float> val_rows;
  if (config.voting == Voting::single_crop) val_rows = feature_rows(s.val);
  auto validate = [&](const std::vector<std::size_t>& idx) {
    if (config.voting == Voting::four_crop) return evaluate(model, dataset, idx, task, store, config);
    NoGradGuard no_grad;
    Tensor logits = model.head_logits(Tensor::from({idx.size(), D}, val_rows));
    std::vector<int> preds;
    const std::size_t C = model.classes().size();
    for (std::size_t r = 0; r < idx.size(); ++r) preds.push_back(model.classes()[argmax(logits.data().subspan(r * C, C))]);
    return compute_metrics(preds, labels_of(dataset, idx, task), model.classes(), positive_of(model, config));
  };

  ProbeResult result = run_training(model.head_parameters(), s, config, step_loss, validate, on_epoch);
  result.test = evaluate(model, dataset, s.test, task, store, config);
  result.backbone_hash_before = before;
  result.backbone_hash_after = params_digest(model.backbone().parameters());
  if (result.backbone_hash_after != before) throw ContractError("linear probing modified the frozen backbone");
  return result;
}

Tensor masked_multilabel_loss(const std::vector<Tensor>& logits, const std::vector<std::optional<int>>& targets) {
  if (logits.size() != targets.size()) throw ContractError("masked loss needs one target slot per task");
  Tensor total;
  std::size_t present = 0;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    if (!targets[t]) continue;
    const std::size_t C = logits[t].shape().back();
    if (logits[t].numel() != C) throw DimensionError("masked loss expects one row of logits per task");
    if (*targets[t] < 0 || static_cast<std::size_t>(*targets[t]) >= C) {
      throw ContractError("target " + std::to_string(*targets[t]) + " out of range for task " + std::to_string(t));
    }
    Tensor ce = ops::cross_entropy(ops::reshape(logits[t], {1, C}), {*targets[t]});
    total = total.defined() ? ops::add(total, ce) : ce;
    ++present;
  }
  if (present > 0) return ops::scale(total, static_cast<float>(1.0 / static_cast<double>(present)));
  if (logits.empty()) return Tensor::scalar(0.0f);
  // Zero that stays connected to the graph, so backward still runs and yields zero gradients.
  for (const auto& l : logits) {
    Tensor z = ops::scale(ops::sum(l), 0.0f);
    total = total.defined() ? ops::add(total, z) : z;
  }
  return total;
}

}  // namespace nvk
