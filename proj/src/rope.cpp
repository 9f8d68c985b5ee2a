#include "tracktention/rope.hpp"

#include <cmath>
#include <string>

namespace tracktention {

std::vector<double> rope_frequencies(std::size_t d, double base) {
  if (d == 0 || d % 4 != 0) {
    throw ConfigError("rotary/sinusoid width must be divisible by 4, got " + std::to_string(d));
  }
  const std::size_t quarter = d / 4;
  const double half = static_cast<double>(d / 2);
  std::vector<double> freqs(quarter);
  for (std::size_t k = 0; k < quarter; ++k) {
    freqs[k] = std::pow(base, -2.0 * static_cast<double>(k) / half);
  }
  return freqs;
}

template <typename T>
void rope_rotate(std::span<T> f, double x, double y, std::span<const double> freqs) {
  const std::size_t half = f.size() / 2;
  for (std::size_t k = 0; k < freqs.size(); ++k) {
    for (std::size_t side = 0; side < 2; ++side) {
      const double angle = freqs[k] * (side == 0 ? x : y);
      const T c = static_cast<T>(std::cos(angle));
      const T s = static_cast<T>(std::sin(angle));
      T& a = f[side * half + 2 * k];
      T& b = f[side * half + 2 * k + 1];
      const T ra = a * c - b * s;
      const T rb = a * s + b * c;
      a = ra;
      b = rb;
    }
  }
}

template <typename T>
Tensor<T> rope_apply(const Tensor<T>& f, const Tensor<T>& positions, double base) {
  const std::size_t d = f.shape().back();
  const auto freqs = rope_frequencies(d, base);
  const std::size_t rows = f.size() / d;
  if (positions.shape().back() != 2 || positions.size() != rows * 2) {
    throw DimensionError("rope_apply needs one (x, y) position per row: features " +
                         shape_string(f.shape()) + ", positions " + shape_string(positions.shape()));
  }
  Tensor<T> out = f;
  auto data = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    rope_rotate<T>(data.subspan(r * d, d), positions[2 * r], positions[2 * r + 1], freqs);
  }
  return out;
}

template <typename T>
void sinusoid_embed(std::span<T> out, double x, double y, std::span<const double> freqs) {
  const std::size_t half = out.size() / 2;
  for (std::size_t k = 0; k < freqs.size(); ++k) {
    out[2 * k] = static_cast<T>(std::sin(freqs[k] * x));
    out[2 * k + 1] = static_cast<T>(std::cos(freqs[k] * x));
    out[half + 2 * k] = static_cast<T>(std::sin(freqs[k] * y));
    out[half + 2 * k + 1] = static_cast<T>(std::cos(freqs[k] * y));
  }
}

template void rope_rotate(std::span<float>, double, double, std::span<const double>);
template void rope_rotate(std::span<double>, double, double, std::span<const double>);
template Tensor<float> rope_apply(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> rope_apply(const Tensor<double>&, const Tensor<double>&, double);
template void sinusoid_embed(std::span<float>, double, double, std::span<const double>);
template void sinusoid_embed(std::span<double>, double, double, std::span<const double>);

}  // namespace tracktention
