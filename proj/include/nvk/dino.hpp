// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "nvk/augment.hpp"
#include "nvk/backbone.hpp"
#include "nvk/config.hpp"
#include "nvk/optim.hpp"

namespace nvk {

struct DinoHeadConfig {
  std::size_t hidden = 512;
  std::size_t bottleneck = 256;
  std::size_t out_dim = 1024;
};

/// Three-layer GELU MLP to a bottleneck, L2 normalization, then a
/// weight-normalized projection to K outputs whose column norms are pinned to 1.
class DinoHead {
 public:
  DinoHead() = default;
  DinoHead(std::size_t in_dim, DinoHeadConfig config, Rng& rng);

  /// [B x in_dim] -> [B x K].
  Tensor forward(const Tensor& x) const;
  ParamList parameters() const;
  /// Independent copy of the weights.
  DinoHead clone() const;
  const DinoHeadConfig& config() const { return config_; }

 private:
  DinoHeadConfig config_;
  Tensor w1_, b1_, w2_, b2_, w3_, b3_;
  Tensor last_;  // [bottleneck x K], direction only
};

/// Backbone plus projection head. Copies are deep.
class DinoNetwork {
 public:
  DinoNetwork(std::unique_ptr<Backbone> backbone, DinoHead head);
  DinoNetwork(const DinoNetwork& other);
  DinoNetwork& operator=(const DinoNetwork& other);
  DinoNetwork(DinoNetwork&&) noexcept = default;
  DinoNetwork& operator=(DinoNetwork&&) noexcept = default;

  /// Class-token features of each image stacked into [B x D].
  Tensor embed(const std::vector<Tensor>& images) const;
  /// Head outputs [B x K].
  Tensor forward(const std::vector<Tensor>& images) const;

  /// Backbone names followed by "head.*".
  ParamList parameters() const;
  const Backbone& backbone() const { return *backbone_; }
  Backbone& backbone() { return *backbone_; }
  const DinoHead& head() const { return head_; }

 private:
  std::unique_ptr<Backbone> backbone_;
  DinoHead head_;
};

struct DinoConfig {
  std::size_t epochs = 100;
  double lr = 5e-4;  // value reached at the end of warmup
  double min_lr = 1e-6;
  double warmup_epochs = 10;
  double weight_decay = 0.04;
  double weight_decay_end = 0.4;
  double teacher_temp = 0.04;
  double warmup_teacher_temp = 0.04;
  double warmup_teacher_temp_epochs = 0;
  double student_temp = 0.1;
  double momentum_teacher = 0.996;
  double center_momentum = 0.9;
  bool centering = true;
  std::size_t batch_size = 64;
  std::size_t n_local_crops = 8;
  std::pair<double, double> global_crop_scale{0.4, 1.0};
  std::pair<double, double> local_crop_scale{0.05, 0.4};
  std::size_t global_size = 224;
  std::size_t local_size = 96;
  double clip_grad = 3.0;  // global-norm clip; 0 disables
  std::size_t nan_abort_after = 10;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  DinoHeadConfig head;

  /// Reads the [dino] section; missing keys keep the defaults above.
  static DinoConfig from_config(const ConfigFile& cfg);
  void validate() const;
  ViewSpec view_spec() const;
};

struct ScheduleValues {
  double lr;
  double weight_decay;
  double teacher_temp;
  double momentum;
};

/// Per-step hyperparameters: linear-warmup then cosine learning rate, cosine
/// weight-decay ramp, teacher-temperature warmup then constant, cosine EMA
/// momentum rising to 1. `step` must lie in [0, epochs * steps_per_epoch].
ScheduleValues schedule(std::size_t step, std::size_t steps_per_epoch, const DinoConfig& config);

/// softmax(logits / tau) along the last axis.
Tensor sharpen(const Tensor& logits, double tau);

/// Cross-view loss. `student` holds one [B x K] output per view with the two
/// global views first; `teacher` holds exactly the two global-view outputs.
/// Every (teacher view g, student view v != g) pair contributes
/// H(softmax((t_g - center)/tau_t), softmax(s_v/tau_s)), averaged over the
/// batch; the sum is divided by the number of pairs.
Tensor dino_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher, const Tensor& center,
                 double student_temp, double teacher_temp);

/// teacher = float(m) * teacher + float(1 - m) * student, elementwise in
/// float. Names and shapes must agree pairwise.
void ema_update(const ParamList& teacher, const ParamList& student, double momentum);

/// center = rate * center + (1 - rate) * row_mean(teacher_outputs), in double.
void center_update(Tensor& center, const std::vector<Tensor>& teacher_outputs, double rate);

/// Mean Shannon entropy (nats) of the rows of a probability matrix.
double mean_row_entropy(const Tensor& probs);

struct DinoState {
  DinoNetwork student;
  DinoNetwork teacher;
  Tensor center;  // [K]
  std::size_t step = 0;
  std::size_t nan_streak = 0;  // consecutive skipped batches
  std::unique_ptr<AdamW> optimizer;

  /// Student from `backbone`, teacher as an exact copy, zero center.
  static DinoState create(std::unique_ptr<Backbone> backbone, const DinoConfig& config);

  /// "student.*", "teacher.*", "dino.center", "dino.step", "optim.*".
  ParamList checkpoint() const;
  void restore(const ParamList& archive);
};

struct StepLog {
  std::size_t step;
  double loss;  // NaN for skipped batches
  ScheduleValues sched;
  double teacher_entropy;
  double grad_norm;
  bool skipped;
};

struct EpochStats {
  std::size_t steps = 0;
  double mean_loss = 0;
  std::size_t nan_batches = 0;
  double grad_norm_mean = 0;
  double grad_norm_max = 0;
  double teacher_entropy_min = 0;
  double teacher_entropy_mean = 0;
};

using StepCallback = std::function<void(const StepLog&)>;

std::size_t steps_per_epoch(std::size_t dataset_size, const DinoConfig& config);

/// One pass over `images` (dropping the last partial batch). Each step builds
/// per-image view sets from seeds derived from (seed, epoch, image), runs the
/// student on every view and the teacher on the global views, backpropagates
/// the cross-view loss, clips and applies AdamW to the student, then updates
/// the teacher by EMA and the center. Non-finite batches are skipped and
/// counted; `nan_abort_after` consecutive ones raise NumericalAbort.
EpochStats train_epoch(const std::vector<Tensor>& images, DinoState& state, const DinoConfig& config,
                       std::size_t epoch, const StepCallback& on_step = {});

}  // namespace nvk
