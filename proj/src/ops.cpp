// SPDX-License-Identifier: Apache-2.0
#include "nvk/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "nvk/error.hpp"

namespace nvk::ops {

using detail::make_result;
using detail::Node;

namespace {

std::size_t resolve_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

/// Views a tensor as [outer x n x inner] around one axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

bool wants_grad(const Node& n) { return n.requires_grad; }

void check_suffix(const Tensor& a, const Tensor& b, const char* op) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  bool ok = bs.size() <= as.size() && std::equal(bs.begin(), bs.end(), as.end() - static_cast<long>(bs.size()));
  if (!ok && b.numel() == 1) ok = true;
  if (!ok) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(bs) + " onto " + to_string(as));
  }
}

/// Sums a gradient of a's shape down to b's (trailing-suffix) shape.
std::vector<float> reduce_to(std::span<const float> g, std::size_t bn) {
  std::vector<double> acc(bn, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) acc[i % bn] += g[i];
  return {acc.begin(), acc.end()};
}

template <typename F, typename DF>
Tensor unary(const Tensor& a, const char* name, F f, DF df) {
  auto x = a.data();
  std::vector<float> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_result(a.shape(), std::move(y), {a}, name, [df](Node& self) {
    Node& p = *self.parents[0];
    std::vector<float> g(self.data.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * df(p.data[i], self.data[i]);
    p.accumulate(g);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto A = a.data();
  auto B = b.data();
  std::vector<float> out(m * n);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const float* brow = &B[p * n];
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<float>(row[j]);
  }
  return make_result({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const float* g = self.grad.data();
    if (wants_grad(pa)) {
      std::vector<float> da(m * k);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(g[i * n + j]) * pb.data[p * n + j];
          da[i * k + p] = static_cast<float>(s);
        }
      }
      pa.accumulate(da);
    }
    if (wants_grad(pb)) {
      std::vector<double> acc(k * n, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa.data[i * k + p];
          double* dst = &acc[p * n];
          for (std::size_t j = 0; j < n; ++j) dst[j] += av * g[i * n + j];
        }
      }
      pb.accumulate(std::vector<float>(acc.begin(), acc.end()));
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects a matrix, got " + to_string(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto x = a.data();
  std::vector<float> y(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = x[i * c + j];
  return make_result({c, r}, std::move(y), {a}, "transpose", [r, c](Node& self) {
    std::vector<float> g(self.grad.size());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] = self.grad[j * r + i];
    self.parents[0]->accumulate(g);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_suffix(a, b, "add");
  auto x = a.data();
  auto y = b.data();
  const std::size_t bn = y.size();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i % bn];
  return make_result(a.shape(), std::move(out), {a, b}, "add", [bn](Node& self) {
    if (wants_grad(*self.parents[0])) self.parents[0]->accumulate(self.grad);
    if (wants_grad(*self.parents[1])) self.parents[1]->accumulate(reduce_to(self.grad, bn));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_suffix(a, b, "sub");
  auto x = a.data();
  auto y = b.data();
  const std::size_t bn = y.size();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i % bn];
  return make_result(a.shape(), std::move(out), {a, b}, "sub", [bn](Node& self) {
    if (wants_grad(*self.parents[0])) self.parents[0]->accumulate(self.grad);
    if (wants_grad(*self.parents[1])) {
      auto g = reduce_to(self.grad, bn);
      for (auto& v : g) v = -v;
      self.parents[1]->accumulate(g);
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_suffix(a, b, "mul");
  auto x = a.data();
  auto y = b.data();
  const std::size_t bn = y.size();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i % bn];
  return make_result(a.shape(), std::move(out), {a, b}, "mul", [bn](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::size_t n = self.grad.size();
    if (wants_grad(pa)) {
      std::vector<float> g(n);
      for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * pb.data[i % bn];
      pa.accumulate(g);
    }
    if (wants_grad(pb)) {
      std::vector<float> g(n);
      for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] * pa.data[i];
      pb.accumulate(reduce_to(g, bn));
    }
  });
}

Tensor scale(const Tensor& a, float s) {
  return unary(a, "scale", [s](float v) { return v * s; }, [s](float, float) { return s; });
}

Tensor add_scalar(const Tensor& a, float s) {
  return unary(a, "add_scalar", [s](float v) { return v + s; }, [](float, float) { return 1.0f; });
}

Tensor neg(const Tensor& a) {
  return unary(a, "neg", [](float v) { return -v; }, [](float, float) { return -1.0f; });
}

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, "log", [](float v) { return std::log(v); }, [](float x, float) { return 1.0f / x; });
}

Tensor tanh(const Tensor& a) {
  return unary(a, "tanh", [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid", [](float v) { return 1.0f / (1.0f + std::exp(-v)); },
      [](float, float y) { return y * (1.0f - y); });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, "silu", [](float v) { return v / (1.0f + std::exp(-v)); },
      [](float x, float) {
        const float s = 1.0f / (1.0f + std::exp(-x));
        return s * (1.0f + x * (1.0f - s));
      });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary(
      a, "gelu", [](float v) { return static_cast<float>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2))); },
      [](float x, float) {
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * static_cast<double>(x) * x);
        return static_cast<float>(cdf + x * pdf);
      });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a, "softplus",
      [](float v) { return v > 20.0f ? v : static_cast<float>(std::log1p(std::exp(static_cast<double>(v)))); },
      [](float x, float) { return 1.0f / (1.0f + std::exp(-x)); });
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = resolve_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  auto in = x.data();
  std::vector<float> out(in.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t k = 0; k < s.n; ++k) mx = std::max(mx, in[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        const double e = std::exp(static_cast<double>(in[base + k * s.inner]) - mx);
        out[base + k * s.inner] = static_cast<float>(e);
        total += e;
      }
      for (std::size_t k = 0; k < s.n; ++k) {
        out[base + k * s.inner] = static_cast<float>(out[base + k * s.inner] / total);
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x}, "softmax", [s](Node& self) {
    std::vector<float> g(self.grad.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) {
          dot += static_cast<double>(self.grad[base + k * s.inner]) * self.data[base + k * s.inner];
        }
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t idx = base + k * s.inner;
          g[idx] = static_cast<float>(self.data[idx] * (self.grad[idx] - dot));
        }
      }
    }
    self.parents[0]->accumulate(g);
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const std::size_t ax = resolve_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  auto in = x.data();
  std::vector<float> out(in.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t k = 0; k < s.n; ++k) mx = std::max(mx, in[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) total += std::exp(static_cast<double>(in[base + k * s.inner]) - mx);
      const double lse = mx + std::log(total);
      for (std::size_t k = 0; k < s.n; ++k) {
        out[base + k * s.inner] = static_cast<float>(in[base + k * s.inner] - lse);
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x}, "log_softmax", [s](Node& self) {
    std::vector<float> g(self.grad.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        double gsum = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) gsum += self.grad[base + k * s.inner];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t idx = base + k * s.inner;
          g[idx] = static_cast<float>(self.grad[idx] - std::exp(static_cast<double>(self.data[idx])) * gsum);
        }
      }
    }
    self.parents[0]->accumulate(g);
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (float v : x.data()) total += v;
  return make_result({}, {static_cast<float>(total)}, {x}, "sum", [](Node& self) {
    std::vector<float> g(self.parents[0]->data.size(), self.grad[0]);
    self.parents[0]->accumulate(g);
  });
}

Tensor sum(const Tensor& x, int axis) {
  const std::size_t ax = resolve_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<long>(ax));
  auto in = x.data();
  std::vector<float> out(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double total = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) total += in[(o * s.n + k) * s.inner + i];
      out[o * s.inner + i] = static_cast<float>(total);
    }
  }
  return make_result(std::move(out_shape), std::move(out), {x}, "sum_axis", [s](Node& self) {
    std::vector<float> g(s.outer * s.n * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.n; ++k)
        for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.n + k) * s.inner + i] = self.grad[o * s.inner + i];
    self.parents[0]->accumulate(g);
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0f / static_cast<float>(x.numel())); }

Tensor mean(const Tensor& x, int axis) {
  const std::size_t ax = resolve_axis(axis, x.rank());
  return scale(sum(x, axis), 1.0f / static_cast<float>(x.dim(ax)));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + to_string(x.shape()) + " cannot become " + to_string(shape));
  }
  std::vector<float> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, "reshape",
                     [](Node& self) { self.parents[0]->accumulate(self.grad); });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const std::size_t ax = resolve_axis(axis, parts[0].rank());
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != out_shape.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < probe.size(); ++d) {
      if (d != ax && probe[d] != parts[0].shape()[d]) {
        throw DimensionError("concat: " + to_string(probe) + " does not match " + to_string(parts[0].shape()));
      }
    }
    widths.push_back(probe[ax]);
    out_shape[ax] += probe[ax];
  }
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<float> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    auto in = parts[pi].data();
    const std::size_t w = widths[pi];
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < w; ++k)
        for (std::size_t i = 0; i < s.inner; ++i)
          out[(o * s.n + offset + k) * s.inner + i] = in[(o * w + k) * s.inner + i];
    offset += w;
  }
  return make_result(out_shape, std::move(out), parts, "concat", [s, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < widths.size(); ++pi) {
      const std::size_t w = widths[pi];
      Node& p = *self.parents[pi];
      if (wants_grad(p)) {
        std::vector<float> g(s.outer * w * s.inner);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t k = 0; k < w; ++k)
            for (std::size_t i = 0; i < s.inner; ++i)
              g[(o * w + k) * s.inner + i] = self.grad[(o * s.n + off + k) * s.inner + i];
        p.accumulate(g);
      }
      off += w;
    }
  });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = resolve_axis(axis, x.rank());
  if (begin >= end || end > x.dim(ax)) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                         to_string(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), ax);
  const std::size_t w = end - begin;
  Shape out_shape = x.shape();
  out_shape[ax] = w;
  auto in = x.data();
  std::vector<float> out(s.outer * w * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < w; ++k)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[(o * w + k) * s.inner + i] = in[(o * s.n + begin + k) * s.inner + i];
  return make_result(std::move(out_shape), std::move(out), {x}, "slice", [s, w, begin](Node& self) {
    std::vector<float> g(s.outer * s.n * s.inner, 0.0f);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < w; ++k)
        for (std::size_t i = 0; i < s.inner; ++i)
          g[(o * s.n + begin + k) * s.inner + i] = self.grad[(o * w + k) * s.inner + i];
    self.parents[0]->accumulate(g);
  });
}

Tensor flip(const Tensor& x, int axis) {
  const std::size_t ax = resolve_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  auto in = x.data();
  std::vector<float> out(in.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.n; ++k)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[(o * s.n + k) * s.inner + i] = in[(o * s.n + (s.n - 1 - k)) * s.inner + i];
  return make_result(x.shape(), std::move(out), {x}, "flip", [s](Node& self) {
    std::vector<float> g(self.grad.size());
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.n; ++k)
        for (std::size_t i = 0; i < s.inner; ++i)
          g[(o * s.n + k) * s.inner + i] = self.grad[(o * s.n + (s.n - 1 - k)) * s.inner + i];
    self.parents[0]->accumulate(g);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: gamma/beta " + to_string(gamma.shape()) + "/" + to_string(beta.shape()) +
                         " do not match feature size of " + to_string(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  auto in = x.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  std::vector<float> out(in.size());
  // xhat and 1/std per row are needed by the backward pass.
  auto xhat = std::make_shared<std::vector<float>>(in.size());
  auto rstd = std::make_shared<std::vector<float>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = &in[r * d];
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = static_cast<float>(rs);
    for (std::size_t j = 0; j < d; ++j) {
      const float xh = static_cast<float>((row[j] - mu) * rs);
      (*xhat)[r * d + j] = xh;
      out[r * d + j] = xh * gm[j] + bt[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta}, "layer_norm", [d, rows, xhat, rstd](Node& self) {
    Node& px = *self.parents[0];
    Node& pg = *self.parents[1];
    Node& pb = *self.parents[2];
    const float* g = self.grad.data();
    if (wants_grad(pg) || wants_grad(pb)) {
      std::vector<double> dg(d, 0.0), db(d, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) {
          dg[j] += static_cast<double>(g[r * d + j]) * (*xhat)[r * d + j];
          db[j] += g[r * d + j];
        }
      if (wants_grad(pg)) pg.accumulate(std::vector<float>(dg.begin(), dg.end()));
      if (wants_grad(pb)) pb.accumulate(std::vector<float>(db.begin(), db.end()));
    }
    if (wants_grad(px)) {
      std::vector<float> dx(rows * d);
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dxh = static_cast<double>(g[r * d + j]) * pg.data[j];
          m1 += dxh;
          m2 += dxh * (*xhat)[r * d + j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const double dxh = static_cast<double>(g[r * d + j]) * pg.data[j];
          dx[r * d + j] = static_cast<float>((*rstd)[r] * (dxh - m1 - (*xhat)[r * d + j] * m2));
        }
      }
      px.accumulate(dx);
    }
  });
}

Tensor l2_normalize(const Tensor& x, float eps) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  auto in = x.data();
  std::vector<float> out(in.size());
  auto norms = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += static_cast<double>(in[r * d + j]) * in[r * d + j];
    const double n = std::max(std::sqrt(ss), static_cast<double>(eps));
    (*norms)[r] = n;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = static_cast<float>(in[r * d + j] / n);
  }
  return make_result(x.shape(), std::move(out), {x}, "l2_normalize", [d, rows, norms, eps](Node& self) {
    std::vector<float> dx(rows * d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double n = (*norms)[r];
      if (n <= eps) {
        for (std::size_t j = 0; j < d; ++j) dx[r * d + j] = static_cast<float>(self.grad[r * d + j] / n);
        continue;
      }
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(self.grad[r * d + j]) * self.data[r * d + j];
      for (std::size_t j = 0; j < d; ++j) {
        dx[r * d + j] = static_cast<float>((self.grad[r * d + j] - self.data[r * d + j] * dot) / n);
      }
    }
    self.parents[0]->accumulate(dx);
  });
}

Tensor extract_patches(const Tensor& image, std::size_t patch) {
  if (image.rank() != 3) throw DimensionError("extract_patches expects [H x W x C], got " + to_string(image.shape()));
  const std::size_t H = image.dim(0), W = image.dim(1), C = image.dim(2);
  if (patch == 0 || H % patch != 0 || W % patch != 0) {
    throw ConfigError("image " + to_string(image.shape()) + " is not divisible into " + std::to_string(patch) +
                      "px patches");
  }
  const std::size_t gh = H / patch, gw = W / patch, J = gh * gw, row_len = patch * patch * C;
  // index[j * row_len + e] = flat pixel offset in the image.
  auto index = std::make_shared<std::vector<std::size_t>>(J * row_len);
  for (std::size_t pr = 0; pr < gh; ++pr)
    for (std::size_t pc = 0; pc < gw; ++pc)
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t j = pr * gw + pc;
            const std::size_t e = (y * patch + x) * C + c;
            (*index)[j * row_len + e] = ((pr * patch + y) * W + (pc * patch + x)) * C + c;
          }
  auto in = image.data();
  std::vector<float> out(J * row_len);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[(*index)[i]];
  return make_result({J, row_len}, std::move(out), {image}, "extract_patches", [index](Node& self) {
    std::vector<float> g(self.parents[0]->data.size(), 0.0f);
    for (std::size_t i = 0; i < index->size(); ++i) g[(*index)[i]] += self.grad[i];
    self.parents[0]->accumulate(g);
  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  const std::size_t K = logits.shape().back();
  const std::size_t B = logits.numel() / K;
  if (targets.size() != B) {
    throw ContractError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(B) +
                        " rows");
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= K) throw ContractError("cross_entropy: target out of range");
  }
  Tensor rows = logits.rank() == 1 ? reshape(logits, {1, K}) : logits;
  Tensor lsm = log_softmax(rows, -1);
  std::vector<float> onehot(B * K, 0.0f);
  for (std::size_t b = 0; b < B; ++b) onehot[b * K + static_cast<std::size_t>(targets[b])] = -1.0f / static_cast<float>(B);
  return sum(mul(lsm, Tensor::from({B, K}, std::move(onehot))));
}

Tensor soft_cross_entropy(const Tensor& target_probs, const Tensor& logits) {
  if (target_probs.shape() != logits.shape()) {
    throw DimensionError("soft_cross_entropy: " + to_string(target_probs.shape()) + " vs " + to_string(logits.shape()));
  }
  const std::size_t K = logits.shape().back();
  const std::size_t B = logits.numel() / K;
  Tensor lsm = log_softmax(logits, -1);
  Tensor weights = scale(target_probs.detach(), -1.0f / static_cast<float>(B));
  return sum(mul(lsm, weights));
}

}  // namespace nvk::ops
