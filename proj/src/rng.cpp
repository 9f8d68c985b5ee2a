#include "tracktention/rng.hpp"

#include <cmath>
#include <numbers>

namespace tracktention {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) noexcept : seed_(seed), key_(mix64(seed + kGolden)) {}

std::uint64_t Rng::next_u64() noexcept {
  const std::uint64_t n = counter_++;
  return mix64(key_ + (n + 1) * kGolden);
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() noexcept {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
}

Rng Rng::stream(std::uint64_t id) const noexcept {
  return Rng(mix64(key_ ^ mix64(id + 0xD1B54A32D192ED03ull)));
}

template <typename T>
Tensor<T> rng_uniform(Rng& rng, const Shape& shape) {
  Tensor<T> out(shape);
  for (T& v : out.data()) {
    if constexpr (sizeof(T) == sizeof(float)) {
      v = static_cast<T>(static_cast<double>(rng.next_u64() >> 40) * 0x1.0p-24);
    } else {
      v = static_cast<T>(rng.uniform());
    }
  }
  return out;
}

template <typename T>
Tensor<T> rng_normal(Rng& rng, const Shape& shape, double std) {
  Tensor<T> out(shape);
  for (T& v : out.data()) v = static_cast<T>(std * rng.normal());
  return out;
}

template Tensor<float> rng_uniform(Rng&, const Shape&);
template Tensor<double> rng_uniform(Rng&, const Shape&);
template Tensor<float> rng_normal(Rng&, const Shape&, double);
template Tensor<double> rng_normal(Rng&, const Shape&, double);

}  // namespace tracktention
