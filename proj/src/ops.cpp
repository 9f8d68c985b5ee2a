#include "tracktention/ops.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "tracktention/parallel.hpp"

namespace tracktention {

namespace kernel {

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m,
            std::size_t k, std::size_t n) {
  // i-p-j order: each out[i][j] still accumulates over p in ascending order.
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    std::fill(row, row + n, T{0});
    const T* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

template <typename T>
void matmul_bt(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b.data() + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out[i * n + j] = acc;
    }
  }
}

template <typename T>
void softmax(std::span<T> row) {
  T max_v = -std::numeric_limits<T>::infinity();
  for (T v : row) {
    if (std::isnan(v) || v == std::numeric_limits<T>::infinity()) {
      throw NumericError("softmax input contains NaN or +inf");
    }
    max_v = std::max(max_v, v);
  }
  if (max_v == -std::numeric_limits<T>::infinity()) {
    throw NumericError("softmax row has no finite entry");
  }
  T sum{0};
  for (T& v : row) {
    v = std::exp(v - max_v);
    sum += v;
  }
  const T inv = T{1} / sum;
  for (T& v : row) v *= inv;
}

template <typename T>
void layer_norm(std::span<T> row, std::span<const T> gain, std::span<const T> bias, T eps) {
  const std::size_t d = row.size();
  T mean{0};
  for (T v : row) mean += v;
  mean /= static_cast<T>(d);
  T var{0};
  for (T v : row) var += (v - mean) * (v - mean);
  var /= static_cast<T>(d);
  const T inv = T{1} / std::sqrt(var + eps);
  for (std::size_t i = 0; i < d; ++i) {
    T y = (row[i] - mean) * inv;
    if (!gain.empty()) y *= gain[i];
    if (!bias.empty()) y += bias[i];
    row[i] = y;
  }
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  T acc{0};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace kernel

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul expects 2-D operands");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul inner extents differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor<T> out({m, n});
  const auto av = a.data();
  const auto bv = b.data();
  auto ov = out.data();
  parallel_for(m, [&](std::size_t i) {
    kernel::matmul<T>(av.subspan(i * k, k), bv, ov.subspan(i * n, n), 1, k, n);
  });
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects a 2-D tensor");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  Tensor<T> out = x;
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.size() / c;
  auto data = out.data();
  parallel_for(rows, [&](std::size_t r) { kernel::softmax<T>(data.subspan(r * c, c)); });
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm gain/bias must have length " + std::to_string(d));
  }
  Tensor<T> out = x;
  const std::size_t rows = x.size() / d;
  auto data = out.data();
  parallel_for(rows, [&](std::size_t r) {
    kernel::layer_norm<T>(data.subspan(r * d, d), gain.data(), bias.data(), eps);
  });
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  if (w.rank() != 2) throw DimensionError("linear weight must be 2-D");
  const std::size_t in = w.dim(0), outw = w.dim(1);
  if (x.shape().back() != in) {
    throw DimensionError("linear input width " + std::to_string(x.shape().back()) +
                         " does not match weight " + shape_string(w.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = outw;
  Tensor<T> out(out_shape);
  const std::size_t rows = x.size() / in;
  const auto xv = x.data();
  const auto wv = w.data();
  auto ov = out.data();
  parallel_for(rows, [&](std::size_t r) {
    kernel::matmul<T>(xv.subspan(r * in, in), wv, ov.subspan(r * outw, outw), 1, in, outw);
  });
  return out;
}

template <typename T>
T gelu(T x) {
  return T{0.5} * x * (T{1} + std::erf(x / std::sqrt(T{2})));
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (T& v : out.data()) v = gelu(v);
  return out;
}

#define TT_INSTANTIATE(T)                                                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> transpose(const Tensor<T>&);                                             \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                          \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> gelu(const Tensor<T>&);                                                  \
  template T gelu(T);                                                                         \
  template void kernel::matmul(std::span<const T>, std::span<const T>, std::span<T>,          \
                               std::size_t, std::size_t, std::size_t);                        \
  template void kernel::matmul_bt(std::span<const T>, std::span<const T>, std::span<T>,       \
                                  std::size_t, std::size_t, std::size_t);                     \
  template void kernel::softmax(std::span<T>);                                                \
  template void kernel::layer_norm(std::span<T>, std::span<const T>, std::span<const T>, T);  \
  template T kernel::dot(std::span<const T>, std::span<const T>);

TT_INSTANTIATE(float)
TT_INSTANTIATE(double)
#undef TT_INSTANTIATE

}  // namespace tracktention
