#pragma once

#include <cstddef>
#include <span>

#include "tracktention/tensor.hpp"

namespace tracktention {

// Kernels. Every reduction runs in ascending index order so results are
// bit-reproducible; parallel variants only split independent rows.

/// C[m x n] = A[m x k] * B[k x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

/// Softmax over the last axis of a tensor of any rank. Rows are shifted by
/// their max before exponentiation. Throws NumericError on NaN or +inf.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

/// Layer normalization over the last axis followed by gain/bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

/// x[... x in] * w[in x out] -> [... x out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w);

template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
T gelu(T x);

namespace kernel {

/// out[m x n] = a[m x k] * b[k x n]; `out` is overwritten.
template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m,
            std::size_t k, std::size_t n);

/// out[m x n] = a[m x k] * b[n x k]^T.
template <typename T>
void matmul_bt(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m,
               std::size_t k, std::size_t n);

/// In-place softmax of one row.
template <typename T>
void softmax(std::span<T> row);

/// In-place layer norm of one row. `gain`/`bias` may be empty (1 / 0).
template <typename T>
void layer_norm(std::span<T> row, std::span<const T> gain, std::span<const T> bias, T eps);

template <typename T>
T dot(std::span<const T> a, std::span<const T> b);

}  // namespace kernel

}  // namespace tracktention
