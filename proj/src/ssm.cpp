// SPDX-License-Identifier: Apache-2.0
#include "nvk/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "nvk/error.hpp"

namespace nvk::ssm {
namespace {

/// phi(x) = (exp(x) - 1) / x and its derivative, with series near zero.
double phi(double x) {
  if (std::abs(x) < kSeriesThreshold) return 1.0 + x / 2.0 + x * x / 6.0;
  return std::expm1(x) / x;
}

double phi_prime(double x) {
  if (std::abs(x) < kSeriesThreshold) return 0.5 + x / 3.0 + x * x / 8.0;
  return (std::exp(x) * (x - 1.0) + 1.0) / (x * x);
}

}  // namespace

Discretized zoh_discretize(float a, float b, float delta) {
  if (!(delta > 0.0f)) throw PreconditionError("zoh_discretize: step size must be positive, got " + std::to_string(delta));
  const double x = static_cast<double>(delta) * a;
  return {static_cast<float>(std::exp(x)), static_cast<float>(phi(x) * delta * b)};
}

std::pair<Tensor, Tensor> zoh_discretize(const Tensor& A, const Tensor& B, const Tensor& delta) {
  if (A.shape() != B.shape() || A.shape() != delta.shape()) {
    throw DimensionError("zoh_discretize: shapes " + to_string(A.shape()) + ", " + to_string(B.shape()) + ", " +
                         to_string(delta.shape()) + " differ");
  }
  std::vector<float> a_bar(A.numel()), b_bar(A.numel());
  for (std::size_t i = 0; i < A.numel(); ++i) {
    auto d = zoh_discretize(A.at(i), B.at(i), delta.at(i));
    a_bar[i] = d.a_bar;
    b_bar[i] = d.b_bar;
  }
  return {Tensor::from(A.shape(), std::move(a_bar)), Tensor::from(A.shape(), std::move(b_bar))};
}

Tensor selective_scan(const Tensor& u, const SelectiveParams& p) {
  if (u.rank() != 2) throw DimensionError("selective_scan: u must be [L x Di], got " + to_string(u.shape()));
  const std::size_t L = u.dim(0), Di = u.dim(1);
  if (p.A.rank() != 2 || p.A.dim(0) != Di) {
    throw DimensionError("selective_scan: A " + to_string(p.A.shape()) + " does not match u " + to_string(u.shape()));
  }
  const std::size_t N = p.A.dim(1);
  if (p.delta.shape() != u.shape()) {
    throw DimensionError("selective_scan: delta " + to_string(p.delta.shape()) + " must match u " +
                         to_string(u.shape()));
  }
  if (p.B.shape() != Shape{L, N} || p.C.shape() != Shape{L, N}) {
    throw DimensionError("selective_scan: B/C " + to_string(p.B.shape()) + "/" + to_string(p.C.shape()) +
                         " must be " + to_string(Shape{L, N}));
  }
  auto U = u.data();
  auto Dl = p.delta.data();
  auto A = p.A.data();
  auto Bm = p.B.data();
  auto Cm = p.C.data();
  for (float d : Dl) {
    if (!(d > 0.0f)) throw PreconditionError("selective_scan: step sizes must be positive");
  }

  const bool record = grad_enabled() && (u.requires_grad() || p.delta.requires_grad() || p.A.requires_grad() ||
                                         p.B.requires_grad() || p.C.requires_grad());
  // Hidden states h[(t * Di + d) * N + n], kept only when a backward pass may follow.
  auto states = record ? std::make_shared<std::vector<float>>(L * Di * N) : nullptr;
  // Time-major sweep over contiguous rows keeps the cost linear in L.
  std::vector<float> y(L * Di, 0.0f);
  std::vector<float> h(Di * N, 0.0f);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t d = 0; d < Di; ++d) {
      const float ut = U[t * Di + d], dt = Dl[t * Di + d];
      float acc = 0.0f;
      for (std::size_t n = 0; n < N; ++n) {
        const auto z = zoh_discretize(A[d * N + n], Bm[t * N + n], dt);
        float& hn = h[d * N + n];
        hn = z.a_bar * hn + z.b_bar * ut;
        acc += Cm[t * N + n] * hn;
      }
      y[t * Di + d] = acc;
      if (states) std::copy_n(h.begin() + d * N, N, states->begin() + (t * Di + d) * N);
    }
  }

  return detail::make_result({L, Di}, std::move(y), {u, p.delta, p.A, p.B, p.C}, "selective_scan",
                             [L, Di, N, states](detail::Node& self) {
    const auto& U = self.parents[0]->data;
    const auto& Dl = self.parents[1]->data;
    const auto& A = self.parents[2]->data;
    const auto& Bm = self.parents[3]->data;
    const auto& Cm = self.parents[4]->data;
    const auto& gy = self.grad;
    const auto& H = *states;
    std::vector<double> gu(L * Di, 0.0), gdelta(L * Di, 0.0), gA(Di * N, 0.0), gB(L * N, 0.0), gC(L * N, 0.0);
    for (std::size_t d = 0; d < Di; ++d) {
      for (std::size_t n = 0; n < N; ++n) {
        const double a = A[d * N + n];
        double carry = 0.0;  // dL/dh_t arriving from step t+1
        for (std::size_t t = L; t-- > 0;) {
          const double dt = Dl[t * Di + d];
          const double b = Bm[t * N + n];
          const double x = dt * a;
          const double a_bar = std::exp(x);
          const double ph = phi(x);
          const double b_bar = ph * dt * b;
          const double g_out = gy[t * Di + d];
          const double gh = g_out * Cm[t * N + n] + carry;
          const double h = H[(t * Di + d) * N + n];
          const double h_prev = t > 0 ? H[((t - 1) * Di + d) * N + n] : 0.0;
          const double ut = U[t * Di + d];
          gC[t * N + n] += g_out * h;
          gu[t * Di + d] += gh * b_bar;
          const double g_abar = gh * h_prev;
          const double g_bbar = gh * ut;
          const double gx = g_abar * a_bar + g_bbar * dt * b * phi_prime(x);
          gdelta[t * Di + d] += g_bbar * ph * b + gx * a;
          gB[t * N + n] += g_bbar * ph * dt;
          gA[d * N + n] += gx * dt;
          carry = gh * a_bar;
        }
      }
    }
    auto push = [&](std::size_t i, const std::vector<double>& g) {
      if (self.parents[i]->requires_grad) self.parents[i]->accumulate(std::vector<float>(g.begin(), g.end()));
    };
    push(0, gu);
    push(1, gdelta);
    push(2, gA);
    push(3, gB);
    push(4, gC);
  });
}

}  // namespace nvk::ssm
