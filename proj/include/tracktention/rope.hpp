#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tracktention/tensor.hpp"

namespace tracktention {

/// theta_i = base^(-2(i-1)/(d/2)) for i = 1..d/4. Entry k holds theta_{k+1}.
std::vector<double> rope_frequencies(std::size_t d, double base);

/// 2-D rotary encoding of one vector in place. Channel pair k of the first
/// half turns by theta_{k+1} * x, the same pair of the second half by
/// theta_{k+1} * y. `d` must be divisible by 4.
template <typename T>
void rope_rotate(std::span<T> f, double x, double y, std::span<const double> freqs);

/// Applies rope_rotate to every row of f[... x d] using positions[... x 2]
/// (one position per row).
template <typename T>
Tensor<T> rope_apply(const Tensor<T>& f, const Tensor<T>& positions, double base);

/// Sinusoidal 2-D position embedding of width d: channels (2k, 2k+1) of the
/// first half are (sin, cos)(theta_{k+1} x); the second half uses y.
template <typename T>
void sinusoid_embed(std::span<T> out, double x, double y, std::span<const double> freqs);

}  // namespace tracktention
