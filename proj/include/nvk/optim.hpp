// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "nvk/checkpoint.hpp"

namespace nvk {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with decoupled weight decay. Matrices decay; vectors (biases, norm
/// scales, tokens stored as rank-1) do not.
class AdamW {
 public:
  explicit AdamW(ParamList params, AdamWConfig config = {});

  /// One update from the gradients currently held by the parameters.
  /// Parameters without a gradient are left untouched.
  void step(double lr, double weight_decay);
  void zero_grad();
  /// Rescales all gradients so their global L2 norm is at most `max_norm`.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm);
  double grad_norm() const;

  long steps() const { return t_; }
  const ParamList& params() const { return params_; }

  /// Moment buffers as named tensors ("adam.m.<param>", "adam.v.<param>", "adam.t").
  ParamList state() const;
  void load_state(const ParamList& archive);

 private:
  ParamList params_;
  AdamWConfig config_;
  std::vector<std::vector<float>> m_, v_;
  std::vector<bool> decay_;
  long t_ = 0;
};

}  // namespace nvk
