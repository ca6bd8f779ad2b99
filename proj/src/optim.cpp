// SPDX-License-Identifier: Apache-2.0
#include "nvk/optim.hpp"

#include <cmath>

#include "nvk/error.hpp"

namespace nvk {

AdamW::AdamW(ParamList params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0f);
    v_.emplace_back(p.tensor.numel(), 0.0f);
    decay_.push_back(p.tensor.rank() >= 2);
  }
}

void AdamW::step(double lr, double weight_decay) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(config_.beta1);
  const auto b2 = static_cast<float>(config_.beta2);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    const auto shrink = static_cast<float>(1.0 - lr * (decay_[i] ? weight_decay : 0.0));
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (1.0f - b1) * g[k];
      v[k] = b2 * v[k] + (1.0f - b2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] = w[k] * shrink - static_cast<float>(lr * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double AdamW::grad_norm() const {
  double ss = 0.0;
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (float g : p.tensor.grad()) ss += static_cast<double>(g) * g;
  }
  return std::sqrt(ss);
}

double AdamW::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (max_norm > 0.0 && norm > max_norm) {
    const auto factor = static_cast<float>(max_norm / (norm + 1e-6));
    for (auto& p : params_) {
      if (!p.tensor.has_grad()) continue;
      for (auto& g : p.tensor.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

ParamList AdamW::state() const {
  ParamList out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.push_back({"adam.m." + params_[i].name, Tensor::from(params_[i].tensor.shape(), m_[i])});
    out.push_back({"adam.v." + params_[i].name, Tensor::from(params_[i].tensor.shape(), v_[i])});
  }
  out.push_back({"adam.t", Tensor::scalar(static_cast<float>(t_))});
  return out;
}

void AdamW::load_state(const ParamList& archive) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    for (auto [key, buf] : {std::pair{"adam.m.", &m_[i]}, std::pair{"adam.v.", &v_[i]}}) {
      const NamedTensor* e = find_entry(archive, key + params_[i].name);
      if (!e || e->tensor.numel() != buf->size()) {
        throw CheckpointError(std::string("optimizer state missing or mismatched for ") + key + params_[i].name);
      }
      buf->assign(e->tensor.data().begin(), e->tensor.data().end());
    }
  }
  const NamedTensor* t = find_entry(archive, "adam.t");
  if (!t) throw CheckpointError("optimizer state missing adam.t");
  t_ = static_cast<long>(t->tensor.item());
}

}  // namespace nvk
