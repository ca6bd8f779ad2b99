// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "nvk/tensor.hpp"

/// Differentiable tensor operations. Every function records a backward closure
/// when grad mode is on and an input requires a gradient.
///
/// Binary elementwise ops broadcast their second operand when its shape is a
/// trailing suffix of the first one's (bias rows, norm scales, scalars).
namespace nvk::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& a);
Tensor softplus(const Tensor& a);

/// Softmax along `axis` (negative counts from the back), max-subtracted.
Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x, int axis = -1);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
Tensor flip(const Tensor& x, int axis);

/// Normalizes over the last axis, then applies gamma/beta (both [last]).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-6f);
/// x / max(||x||, eps) along the last axis.
Tensor l2_normalize(const Tensor& x, float eps = 1e-12f);

/// [H x W x C] image to [J x P*P*C] patch rows. Patches are taken row-major
/// over the grid; inside a patch the layout is (row, col, channel).
Tensor extract_patches(const Tensor& image, std::size_t patch);

/// Mean of -log softmax(logits)[target] over the rows of a [B x K] matrix.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);
/// Mean over rows of -sum_k p[k] log softmax(logits)[k]; `target_probs` is a constant.
Tensor soft_cross_entropy(const Tensor& target_probs, const Tensor& logits);

}  // namespace nvk::ops
