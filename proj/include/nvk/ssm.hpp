// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>

#include "nvk/tensor.hpp"

/// Selective state-space primitives: zero-order-hold discretization of a
/// diagonal continuous system and the input-dependent recurrence built on it.
namespace nvk::ssm {

/// Below this |delta * a| the closed form of b_bar switches to its series.
inline constexpr double kSeriesThreshold = 1e-4;

struct Discretized {
  float a_bar;
  float b_bar;
};

/// Per-channel ZOH: a_bar = exp(delta*a), b_bar = (delta*a)^-1 (exp(delta*a) - 1) * delta*b.
/// Throws PreconditionError unless delta > 0.
Discretized zoh_discretize(float a, float b, float delta);

/// Elementwise tensor form; all three tensors must share one shape. No gradient is recorded.
std::pair<Tensor, Tensor> zoh_discretize(const Tensor& A, const Tensor& B, const Tensor& delta);

/// Input-dependent parameters of one scan.
struct SelectiveParams {
  Tensor delta;  // [L x Di], strictly positive
  Tensor A;      // [Di x N], diagonal state matrix per channel (negative for a decaying state)
  Tensor B;      // [L x N]
  Tensor C;      // [L x N]
};

/// For every channel d and state n: h_t = a_bar_t h_{t-1} + b_bar_t u_t with
/// h_{-1} = 0, and y_t[d] = sum_n C_t[n] h_t[d, n]. u is [L x Di]; returns [L x Di].
/// Differentiable in u, delta, A, B and C.
Tensor selective_scan(const Tensor& u, const SelectiveParams& params);

}  // namespace nvk::ssm
