// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nvk/augment.hpp"
#include "nvk/backbone.hpp"
#include "nvk/config.hpp"
#include "nvk/dataset.hpp"
#include "nvk/metrics.hpp"

namespace nvk {

/// Backbone plus a linear layer over its class-token feature.
class Classifier {
 public:
  Classifier(std::unique_ptr<Backbone> backbone, std::vector<int> classes, Rng& rng);

  /// Class-token features [D] (no head).
  Tensor features(const Tensor& image) const;
  /// [B x D] features -> [B x C] logits.
  Tensor head_logits(const Tensor& features) const;
  /// [B x C] logits of model-ready images.
  Tensor logits(const std::vector<Tensor>& images) const;
  /// Softmax probabilities of one model-ready image.
  std::vector<double> probabilities(const Tensor& image) const;

  /// "cls_head.w" [D x C] and "cls_head.b" [C].
  ParamList head_parameters() const;
  /// Backbone parameters followed by the head.
  ParamList parameters() const;

  const std::vector<int>& classes() const { return classes_; }
  std::size_t class_index(int label) const;
  const Backbone& backbone() const { return *backbone_; }
  Backbone& backbone() { return *backbone_; }

 private:
  std::unique_ptr<Backbone> backbone_;
  std::vector<int> classes_;
  Tensor head_w_, head_b_;
};

enum class ProbeMode { finetune, linear_probe };
enum class Voting { single_crop, four_crop };
/// How a whole image becomes one model input: centred window with the model's
/// aspect, or the full frame resized.
enum class Framing { center, squash };

std::string to_string(ProbeMode m);
std::string to_string(Voting v);
ProbeMode parse_probe_mode(const std::string& s);
Voting parse_voting(const std::string& s);
Framing parse_framing(const std::string& s);

struct ProbeConfig {
  ProbeMode mode = ProbeMode::finetune;
  std::size_t epochs = 30;
  double lr = 1e-4;  // cosine-decayed to min_lr over all steps
  double min_lr = 1e-6;
  double weight_decay = 0.05;
  std::size_t batch_size = 32;
  bool balanced_sampling = false;
  Voting voting = Voting::single_crop;
  Framing framing = Framing::center;
  bool augment = true;  // random resized crop + flip on training images (fine-tuning only)
  std::size_t crop_h = 256;
  std::size_t crop_w = 372;
  std::optional<int> positive_class;  // binary tasks default to the larger label
  std::vector<float> mean{0.5f};
  std::vector<float> std{0.5f};
  std::uint64_t seed = 0;

  /// Reads the [eval] section.
  static ProbeConfig from_config(const ConfigFile& cfg);
  void validate() const;
};

struct EpochLog {
  std::size_t epoch;
  double train_loss;
  std::optional<MetricReport> val;
};

struct ProbeResult {
  MetricReport test;
  std::optional<MetricReport> best_val;
  std::size_t best_epoch = 0;  // 0 = initial weights
  std::vector<EpochLog> history;
  std::string backbone_hash_before;
  std::string backbone_hash_after;
};

using EpochLogCallback = std::function<void(const EpochLog&)>;

/// Trains only the linear head on frozen features (computed once per image in
/// inference mode). Raises ContractError if the backbone digest changes.
ProbeResult linear_probe(Classifier& model, const LabeledDataset& dataset, const SplitManifest& split,
                         const std::string& task, ImageStore& store, const ProbeConfig& config,
                         const EpochLogCallback& on_epoch = {});

/// Trains backbone and head with cross-entropy and AdamW, optionally with
/// class-balanced batches. Keeps the weights of the epoch with the best
/// validation balanced accuracy, then reports test metrics.
ProbeResult finetune(Classifier& model, const LabeledDataset& dataset, const SplitManifest& split,
                     const std::string& task, ImageStore& store, const ProbeConfig& config,
                     const EpochLogCallback& on_epoch = {});

/// Model input for one image under `config.framing`.
Tensor prepare_input(const Tensor& image, const Backbone& backbone, const ProbeConfig& config);

/// Predicted label of every indexed record under `config.voting`.
std::vector<int> predict(const Classifier& model, const LabeledDataset& dataset, const std::vector<std::size_t>& indices,
                         ImageStore& store, const ProbeConfig& config);
MetricReport evaluate(const Classifier& model, const LabeledDataset& dataset, const std::vector<std::size_t>& indices,
                      const std::string& task, ImageStore& store, const ProbeConfig& config);

struct VoteResult {
  int prediction;
  double positive_prob;
  std::array<double, 4> crop_probs;
};

/// Max-of-positive-probability rule: positive iff max >= threshold.
bool vote_positive(std::span<const double> crop_probs, double threshold = 0.5);

/// Runs the model on the four corner crops (each resized to the model input)
/// and keeps the largest positive-class probability. Binary models only.
VoteResult four_crop_vote(const Tensor& image, const Classifier& model, const ProbeConfig& config);

/// Mean cross-entropy over the tasks whose target is present. `logits[t]` is
/// [C_t] or [1 x C_t]; `targets[t]` is a class index or absent. With no target
/// present the result is 0 with zero gradient.
Tensor masked_multilabel_loss(const std::vector<Tensor>& logits, const std::vector<std::optional<int>>& targets);

}  // namespace nvk
