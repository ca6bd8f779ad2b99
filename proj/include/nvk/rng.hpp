// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

namespace nvk {

/// xoshiro256** generator. Every random decision in the library goes through
/// this type so a run is reproducible from its seed alone.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0);

  /// Seed derived from a base seed and a list of stream identifiers
  /// (epoch, record index, view index...).
  static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> stream);

  std::uint64_t next();
  std::uint64_t operator()() { return next(); }
  static constexpr std::uint64_t min() { return 0; }
  static constexpr std::uint64_t max() { return ~std::uint64_t{0}; }

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t integer(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p);
  double normal();
  /// Normal(0, std) resampled until it falls in [-2 std, 2 std].
  double truncated_normal(double std);

 private:
  std::array<std::uint64_t, 4> s_{};
};

template <typename It>
void shuffle(It first, It last, Rng& rng) {
  auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    auto j = rng.below(i);
    using std::swap;
    swap(first[i - 1], first[j]);
  }
}

}  // namespace nvk
