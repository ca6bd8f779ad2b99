// SPDX-License-Identifier: Apache-2.0
#include "nvk/dino.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

#include "nvk/error.hpp"
#include "nvk/logging.hpp"
#include "nvk/ops.hpp"

namespace nvk {

DinoHead::DinoHead(std::size_t in_dim, DinoHeadConfig config, Rng& rng) : config_(config) {
  if (in_dim == 0 || config.hidden == 0 || config.bottleneck == 0 || config.out_dim == 0) {
    throw ConfigError("DINO head dimensions must be positive");
  }
  w1_ = trunc_normal_param({in_dim, config.hidden}, 0.02, rng);
  b1_ = constant_param({config.hidden}, 0.0f);
  w2_ = trunc_normal_param({config.hidden, config.hidden}, 0.02, rng);
  b2_ = constant_param({config.hidden}, 0.0f);
  w3_ = trunc_normal_param({config.hidden, config.bottleneck}, 0.02, rng);
  b3_ = constant_param({config.bottleneck}, 0.0f);
  last_ = trunc_normal_param({config.bottleneck, config.out_dim}, 0.02, rng);
}

Tensor DinoHead::forward(const Tensor& x) const {
  Tensor h = ops::gelu(ops::add(ops::matmul(x, w1_), b1_));
  h = ops::gelu(ops::add(ops::matmul(h, w2_), b2_));
  h = ops::l2_normalize(ops::add(ops::matmul(h, w3_), b3_));
  // Unit-norm columns: normalize the rows of the transpose.
  Tensor directions = ops::l2_normalize(ops::transpose(last_));
  return ops::matmul(h, ops::transpose(directions));
}

ParamList DinoHead::parameters() const {
  return {{"head.l1", w1_}, {"head.l1.b", b1_}, {"head.l2", w2_},  {"head.l2.b", b2_},
          {"head.l3", w3_}, {"head.l3.b", b3_}, {"head.last", last_}};
}

DinoHead DinoHead::clone() const {
  DinoHead h;
  h.config_ = config_;
  h.w1_ = w1_.clone();
  h.b1_ = b1_.clone();
  h.w2_ = w2_.clone();
  h.b2_ = b2_.clone();
  h.w3_ = w3_.clone();
  h.b3_ = b3_.clone();
  h.last_ = last_.clone();
  return h;
}

DinoNetwork::DinoNetwork(std::unique_ptr<Backbone> backbone, DinoHead head)
    : backbone_(std::move(backbone)), head_(std::move(head)) {}

DinoNetwork::DinoNetwork(const DinoNetwork& other) : backbone_(other.backbone_->clone()), head_(other.head_.clone()) {}

DinoNetwork& DinoNetwork::operator=(const DinoNetwork& other) {
  if (this != &other) {
    backbone_ = other.backbone_->clone();
    head_ = other.head_.clone();
  }
  return *this;
}

Tensor DinoNetwork::embed(const std::vector<Tensor>& images) const {
  if (images.empty()) throw ContractError("DinoNetwork::embed needs at least one image");
  const std::size_t D = backbone_->embed_dim();
  std::vector<Tensor> rows;
  rows.reserve(images.size());
  for (const auto& img : images) rows.push_back(ops::reshape(backbone_->forward(img), {1, D}));
  return rows.size() == 1 ? rows.front() : ops::concat(rows, 0);
}

Tensor DinoNetwork::forward(const std::vector<Tensor>& images) const { return head_.forward(embed(images)); }

ParamList DinoNetwork::parameters() const {
  ParamList p = backbone_->parameters();
  for (auto& e : head_.parameters()) p.push_back(std::move(e));
  return p;
}

DinoConfig DinoConfig::from_config(const ConfigFile& cfg) {
  DinoConfig c;
  const std::string s = "dino";
  auto count = [&](const char* key, std::size_t fallback) {
    const long v = cfg.get_int(s, key, static_cast<long>(fallback));
    if (v < 0) throw ConfigError("dino." + std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.epochs = count("epochs", c.epochs);
  c.lr = cfg.get_double(s, "lr", c.lr);
  c.min_lr = cfg.get_double(s, "min_lr", c.min_lr);
  c.warmup_epochs = cfg.get_double(s, "warmup_epochs", c.warmup_epochs);
  c.weight_decay = cfg.get_double(s, "weight_decay", c.weight_decay);
  c.weight_decay_end = cfg.get_double(s, "weight_decay_end", c.weight_decay_end);
  c.teacher_temp = cfg.get_double(s, "teacher_temp", c.teacher_temp);
  c.warmup_teacher_temp = cfg.get_double(s, "warmup_teacher_temp", c.teacher_temp);
  c.warmup_teacher_temp_epochs = cfg.get_double(s, "warmup_teacher_temp_epochs", c.warmup_teacher_temp_epochs);
  c.student_temp = cfg.get_double(s, "student_temp", c.student_temp);
  c.momentum_teacher = cfg.get_double(s, "momentum_teacher", c.momentum_teacher);
  c.center_momentum = cfg.get_double(s, "center_momentum", c.center_momentum);
  c.centering = cfg.get_bool(s, "centering", c.centering);
  c.batch_size = count("batch_size", c.batch_size);
  c.n_local_crops = count("n_local_crops", c.n_local_crops);
  c.global_crop_scale = cfg.get_range(s, "global_crop_scale", c.global_crop_scale);
  c.local_crop_scale = cfg.get_range(s, "local_crop_scale", c.local_crop_scale);
  c.global_size = count("global_size", c.global_size);
  c.local_size = count("local_size", c.local_size);
  c.clip_grad = cfg.get_double(s, "clip_grad", c.clip_grad);
  c.nan_abort_after = count("nan_abort_after", c.nan_abort_after);
  c.workers = count("workers", c.workers);
  c.seed = static_cast<std::uint64_t>(cfg.get_int(s, "seed", static_cast<long>(c.seed)));
  c.head.hidden = count("head_hidden", c.head.hidden);
  c.head.bottleneck = count("head_bottleneck", c.head.bottleneck);
  c.head.out_dim = count("out_dim", c.head.out_dim);
  c.validate();
  return c;
}

void DinoConfig::validate() const {
  if (batch_size == 0) throw ConfigError("dino.batch_size must be positive");
  if (!(lr >= 0 && min_lr >= 0)) throw ConfigError("learning rates must be non-negative");
  if (warmup_epochs < 0 || warmup_teacher_temp_epochs < 0) throw ConfigError("warmup lengths must be non-negative");
  if (!(teacher_temp > 0 && warmup_teacher_temp > 0 && student_temp > 0)) throw ConfigError("temperatures must be positive");
  if (!(momentum_teacher >= 0 && momentum_teacher <= 1)) throw ConfigError("momentum_teacher must lie in [0, 1]");
  if (!(center_momentum >= 0 && center_momentum <= 1)) throw ConfigError("center_momentum must lie in [0, 1]");
  if (global_size == 0 || local_size == 0) throw ConfigError("crop sizes must be positive");
  if (head.hidden == 0 || head.bottleneck == 0 || head.out_dim == 0) throw ConfigError("head sizes must be positive");
  if (clip_grad < 0) throw ConfigError("clip_grad must be non-negative");
  if (workers == 0) throw ConfigError("workers must be at least 1");
}

ViewSpec DinoConfig::view_spec() const {
  return dino_view_spec(global_size, local_size, n_local_crops, global_crop_scale, local_crop_scale);
}

ScheduleValues schedule(std::size_t step, std::size_t steps_per_epoch, const DinoConfig& config) {
  const std::size_t total = config.epochs * steps_per_epoch;
  if (step > total) {
    throw ContractError("schedule step " + std::to_string(step) + " is past the last step " + std::to_string(total));
  }
  const auto spe = static_cast<double>(steps_per_epoch);
  const auto s = static_cast<double>(step);
  const auto T = static_cast<double>(total);
  const double warmup = std::min(T, std::round(config.warmup_epochs * spe));
  const double t_warmup = std::round(config.warmup_teacher_temp_epochs * spe);
  const double pi = std::numbers::pi;

  ScheduleValues v{};
  if (s < warmup) {
    v.lr = config.lr * s / warmup;
  } else if (T <= warmup) {
    v.lr = config.lr;
  } else {
    v.lr = config.min_lr + 0.5 * (config.lr - config.min_lr) * (1.0 + std::cos(pi * (s - warmup) / (T - warmup)));
  }
  const double progress = T > 0 ? s / T : 0.0;
  v.weight_decay = config.weight_decay_end +
                   0.5 * (config.weight_decay - config.weight_decay_end) * (1.0 + std::cos(pi * progress));
  v.teacher_temp = s < t_warmup
                       ? config.warmup_teacher_temp + (config.teacher_temp - config.warmup_teacher_temp) * s / t_warmup
                       : config.teacher_temp;
  v.momentum = 1.0 - (1.0 - config.momentum_teacher) * (std::cos(pi * progress) + 1.0) / 2.0;
  return v;
}

Tensor sharpen(const Tensor& logits, double tau) {
  if (!(tau > 0)) throw PreconditionError("sharpening temperature must be positive, got " + std::to_string(tau));
  return ops::softmax(ops::scale(logits, static_cast<float>(1.0 / tau)));
}

Tensor dino_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher, const Tensor& center,
                 double student_temp, double teacher_temp) {
  if (teacher.size() != 2) {
    throw ContractError("the teacher must receive exactly 2 global views, got " + std::to_string(teacher.size()));
  }
  if (student.size() < 2) throw ContractError("the student needs both global views plus any local views");
  if (!(student_temp > 0)) throw PreconditionError("student temperature must be positive");

  std::vector<Tensor> targets;
  {
    NoGradGuard no_grad;
    for (const auto& t : teacher) {
      Tensor centered = center.defined() ? ops::sub(t.detach(), center.detach()) : t.detach();
      targets.push_back(sharpen(centered, teacher_temp));
    }
  }
  const auto inv_tau = static_cast<float>(1.0 / student_temp);
  std::vector<Tensor> scaled;
  scaled.reserve(student.size());
  for (const auto& s : student) scaled.push_back(ops::scale(s, inv_tau));

  Tensor total;
  std::size_t pairs = 0;
  for (std::size_t g = 0; g < targets.size(); ++g) {
    for (std::size_t v = 0; v < scaled.size(); ++v) {
      if (v == g) continue;
      Tensor h = ops::soft_cross_entropy(targets[g], scaled[v]);
      total = total.defined() ? ops::add(total, h) : h;
      ++pairs;
    }
  }
  return ops::scale(total, static_cast<float>(1.0 / static_cast<double>(pairs)));
}

void ema_update(const ParamList& teacher, const ParamList& student, double momentum) {
  if (teacher.size() != student.size()) {
    throw CheckpointError("teacher has " + std::to_string(teacher.size()) + " tensors, student " +
                          std::to_string(student.size()));
  }
  const auto m = static_cast<float>(momentum);
  const auto rest = static_cast<float>(1.0 - momentum);
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    const auto& t = teacher[i];
    const auto& s = student[i];
    if (t.name != s.name || t.tensor.shape() != s.tensor.shape()) {
      throw CheckpointError("teacher/student diverge at '" + t.name + "' vs '" + s.name + "'");
    }
    Tensor target = t.tensor;  // shares storage
    auto dst = target.mutable_data();
    auto src = s.tensor.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = m * dst[k] + rest * src[k];
  }
}

void center_update(Tensor& center, const std::vector<Tensor>& teacher_outputs, double rate) {
  std::size_t rows = 0;
  const std::size_t K = center.numel();
  std::vector<double> sum(K, 0.0);
  for (const auto& out : teacher_outputs) {
    if (out.rank() != 2 || out.dim(1) != K) {
      throw DimensionError("teacher output " + to_string(out.shape()) + " does not match center [" + std::to_string(K) + "]");
    }
    auto d = out.data();
    for (std::size_t r = 0; r < out.dim(0); ++r) {
      for (std::size_t k = 0; k < K; ++k) sum[k] += d[r * K + k];
    }
    rows += out.dim(0);
  }
  if (rows == 0) throw PreconditionError("center_update needs a non-empty batch");
  auto c = center.mutable_data();
  for (std::size_t k = 0; k < K; ++k) {
    c[k] = static_cast<float>(rate * c[k] + (1.0 - rate) * (sum[k] / static_cast<double>(rows)));
  }
}

double mean_row_entropy(const Tensor& probs) {
  const std::size_t K = probs.shape().back();
  const std::size_t rows = probs.numel() / K;
  auto d = probs.data();
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < K; ++k) {
      const double p = d[r * K + k];
      if (p > 0) total -= p * std::log(p);
    }
  }
  return total / static_cast<double>(rows);
}

DinoState DinoState::create(std::unique_ptr<Backbone> backbone, const DinoConfig& config) {
  Rng rng(Rng::derive(config.seed, {0x4ead}));
  const std::size_t D = backbone->embed_dim();
  DinoNetwork student(std::move(backbone), DinoHead(D, config.head, rng));
  DinoNetwork teacher(student);
  for (auto& p : teacher.parameters()) p.tensor.set_requires_grad(false);
  DinoState state{std::move(student), std::move(teacher), Tensor::zeros({config.head.out_dim}), 0, 0, nullptr};
  state.optimizer = std::make_unique<AdamW>(state.student.parameters());
  return state;
}

ParamList DinoState::checkpoint() const {
  ParamList out = with_prefix(student.parameters(), "student.");
  for (auto& e : with_prefix(teacher.parameters(), "teacher.")) out.push_back(std::move(e));
  out.push_back({"dino.center", center});
  out.push_back({"dino.step", Tensor::scalar(static_cast<float>(step))});
  for (auto& e : with_prefix(optimizer->state(), "optim.")) out.push_back(std::move(e));
  return out;
}

void DinoState::restore(const ParamList& archive) {
  ParamList s = student.parameters();
  assign_params(s, archive, "student.");
  ParamList t = teacher.parameters();
  assign_params(t, archive, "teacher.");
  ParamList c{{"dino.center", center}};
  assign_params(c, archive);
  const NamedTensor* st = find_entry(archive, "dino.step");
  if (!st || st->tensor.numel() != 1) throw CheckpointError("checkpoint is missing 'dino.step'");
  step = static_cast<std::size_t>(st->tensor.item());
  ParamList opt;
  const std::string prefix = "optim.";
  for (const auto& e : archive) {
    if (e.name.rfind(prefix, 0) == 0) opt.push_back({e.name.substr(prefix.size()), e.tensor});
  }
  optimizer->load_state(opt);
  nan_streak = 0;
}

std::size_t steps_per_epoch(std::size_t dataset_size, const DinoConfig& config) {
  if (dataset_size == 0) return 0;
  return std::max<std::size_t>(1, dataset_size / std::min(config.batch_size, dataset_size));
}

namespace {

// Views of every image in the batch, generated in parallel when workers > 1.
// Each image's views depend only on its own seed, so the result is independent of scheduling.
std::vector<ViewSet> build_views(const std::vector<Tensor>& images, const std::vector<std::size_t>& batch,
                                 const ViewSpec& spec, const DinoConfig& config, std::size_t epoch) {
  std::vector<ViewSet> views(batch.size());
  auto work = [&](std::size_t b) {
    views[b] = make_views(images[batch[b]], spec, Rng::derive(config.seed, {0x7e3, epoch, batch[b]}));
  };
  const std::size_t workers = std::min(config.workers, batch.size());
  if (workers <= 1) {
    for (std::size_t b = 0; b < batch.size(); ++b) work(b);
    return views;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t b = w; b < batch.size(); b += workers) work(b);
    });
  }
  for (auto& t : pool) t.join();
  return views;
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

EpochStats train_epoch(const std::vector<Tensor>& images, DinoState& state, const DinoConfig& config,
                       std::size_t epoch, const StepCallback& on_step) {
  const std::size_t spe = steps_per_epoch(images.size(), config);
  if (spe == 0) throw PreconditionError("train_epoch needs at least one image");
  const std::size_t batch_size = std::min(config.batch_size, images.size());
  const ViewSpec spec = config.view_spec();

  std::vector<std::size_t> order(images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng order_rng(Rng::derive(config.seed, {0x0de7, epoch}));
  shuffle(order.begin(), order.end(), order_rng);

  const ParamList student_params = state.student.parameters();
  const ParamList teacher_params = state.teacher.parameters();
  EpochStats stats;
  double loss_sum = 0, entropy_sum = 0, norm_sum = 0;
  std::size_t good = 0;
  stats.teacher_entropy_min = std::numeric_limits<double>::infinity();

  for (std::size_t b = 0; b < spe; ++b) {
    const ScheduleValues sched = schedule(state.step, spe, config);
    std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b * batch_size),
                                   order.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch_size));
    const auto views = build_views(images, batch, spec, config, epoch);
    const std::size_t n_views = 2 + spec.n_local;

    StepLog log{state.step, std::numeric_limits<double>::quiet_NaN(), sched, 0.0, 0.0, false};
    std::vector<Tensor> teacher_out;
    try {
      std::vector<Tensor> student_out;
      for (std::size_t v = 0; v < n_views; ++v) {
        std::vector<Tensor> stack;
        for (const auto& vs : views) stack.push_back(v < 2 ? vs.global_views[v] : vs.local_views[v - 2]);
        student_out.push_back(state.student.forward(stack));
      }
      {
        NoGradGuard no_grad;
        for (std::size_t g = 0; g < 2; ++g) {
          std::vector<Tensor> stack;
          for (const auto& vs : views) stack.push_back(vs.global_views[g]);
          teacher_out.push_back(state.teacher.forward(stack));
        }
        double entropy = 0;
        for (const auto& t : teacher_out) {
          Tensor centered = config.centering ? ops::sub(t, state.center) : t;
          entropy += mean_row_entropy(sharpen(centered, sched.teacher_temp));
        }
        log.teacher_entropy = entropy / 2.0;
      }
      Tensor center = config.centering ? state.center : Tensor();
      Tensor loss = dino_loss(student_out, teacher_out, center, config.student_temp, sched.teacher_temp);
      log.loss = loss.item();
      if (finite(log.loss)) {
        state.optimizer->zero_grad();
        loss.backward();
        log.grad_norm = config.clip_grad > 0 ? state.optimizer->clip_grad_norm(config.clip_grad)
                                             : state.optimizer->grad_norm();
        if (!finite(log.grad_norm)) log.loss = std::numeric_limits<double>::quiet_NaN();
      }
    } catch (const NonFiniteError& e) {
      warn("epoch " + std::to_string(epoch) + " batch " + std::to_string(b) + ": non-finite activations in layer " +
           std::to_string(e.layer()));
      log.loss = std::numeric_limits<double>::quiet_NaN();
    }

    if (!finite(log.loss)) {
      log.skipped = true;
      state.optimizer->zero_grad();
      ++stats.nan_batches;
      if (++state.nan_streak >= config.nan_abort_after) {
        throw NumericalAbort(std::to_string(state.nan_streak) + " consecutive non-finite batches (last at step " +
                             std::to_string(state.step) + ")");
      }
    } else {
      state.nan_streak = 0;
      state.optimizer->step(sched.lr, sched.weight_decay);
      state.optimizer->zero_grad();
      ema_update(teacher_params, student_params, sched.momentum);
      if (config.centering) center_update(state.center, teacher_out, config.center_momentum);
      loss_sum += log.loss;
      entropy_sum += log.teacher_entropy;
      norm_sum += log.grad_norm;
      stats.grad_norm_max = std::max(stats.grad_norm_max, log.grad_norm);
      stats.teacher_entropy_min = std::min(stats.teacher_entropy_min, log.teacher_entropy);
      ++good;
    }
    ++state.step;
    ++stats.steps;
    if (on_step) on_step(log);
  }
  if (good > 0) {
    stats.mean_loss = loss_sum / static_cast<double>(good);
    stats.teacher_entropy_mean = entropy_sum / static_cast<double>(good);
    stats.grad_norm_mean = norm_sum / static_cast<double>(good);
  } else {
    stats.mean_loss = std::numeric_limits<double>::quiet_NaN();
    stats.teacher_entropy_min = std::numeric_limits<double>::quiet_NaN();
  }
  return stats;
}

}  // namespace nvk
