#pragma once

#include <cstdint>

#include "tracktention/tensor.hpp"

namespace tracktention {

/// Counter-based generator: the n-th draw is a pure function of (key, n), so
/// independent sub-streams can be derived with `stream()` without sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1).
  double uniform() noexcept;
  /// Standard normal via Box-Muller (one draw per call; consumes two counters).
  double normal() noexcept;
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;

  /// Independent child generator keyed by (seed, id).
  Rng stream(std::uint64_t id) const noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

template <typename T>
Tensor<T> rng_uniform(Rng& rng, const Shape& shape);

template <typename T>
Tensor<T> rng_normal(Rng& rng, const Shape& shape, double std = 1.0);

}  // namespace tracktention
