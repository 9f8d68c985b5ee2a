#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "tracktention/tensor.hpp"
#include "tracktention/tracks.hpp"

namespace tracktention {

/// Feature-map token grid. Token j = y * width + x sits at
/// (origin_x + x, origin_y + y); the origin is zero except in translation tests.
struct Grid {
  std::size_t height = 1;
  std::size_t width = 1;
  double origin_x = 0;
  double origin_y = 0;

  std::size_t cells() const { return height * width; }
  double x(std::size_t j) const { return origin_x + static_cast<double>(j % width); }
  double y(std::size_t j) const { return origin_y + static_cast<double>(j / width); }

  /// Grid of a [T x H x W x D] feature map.
  template <typename T>
  static Grid of(const Tensor<T>& features) {
    return Grid{features.dim(1), features.dim(2), 0, 0};
  }
};

/// Parameters of the sampling/splatting attention pair.
template <typename T>
struct TracktentionParams {
  std::size_t d_f = 64;
  std::size_t d_k = 64;
  std::size_t heads = 4;
  Tensor<T> w_q;          ///< [d_f x d_k]
  Tensor<T> w_k;          ///< [d_f x d_k]
  Tensor<T> w_out;        ///< [d_f x d_f]
  Tensor<T> q_norm_gain;  ///< [d_k], split per head
  Tensor<T> k_norm_gain;  ///< [d_k], split per head
  Tensor<T> embed_proj;   ///< [d_f x d_f]
  double sigma = 0.5;
  double rope_base = 100.0;
  bool rope_on_values = true;
  /// Drop invisible track points from both attentions. Off by default.
  bool mask_invisible = false;

  std::size_t head_dim() const { return d_k / heads; }
  std::size_t value_head_dim() const { return d_f / heads; }

  /// Throws ConfigError on inconsistent widths or tensor shapes.
  void validate() const;

  /// Parameters with the given widths: zero projections, unit gains, identity embedding.
  static TracktentionParams zeros(std::size_t d_f, std::size_t d_k, std::size_t heads);

  template <typename U>
  TracktentionParams<U> cast() const {
    TracktentionParams<U> p;
    p.d_f = d_f;
    p.d_k = d_k;
    p.heads = heads;
    p.w_q = w_q.template cast<U>();
    p.w_k = w_k.template cast<U>();
    p.w_out = w_out.template cast<U>();
    p.q_norm_gain = q_norm_gain.template cast<U>();
    p.k_norm_gain = k_norm_gain.template cast<U>();
    p.embed_proj = embed_proj.template cast<U>();
    p.sigma = sigma;
    p.rope_base = rope_base;
    p.rope_on_values = rope_on_values;
    p.mask_invisible = mask_invisible;
    return p;
  }
};

inline constexpr double kQkNormEps = 1e-6;

/// Sinusoidal 2-D embedding of points[N x 2] followed by embed_proj -> [N x d_f].
template <typename T>
Tensor<T> embed_points(const Tensor<T>& points, const TracktentionParams<T>& params);

/// Track tokens [T x M x d_f] from the track positions.
template <typename T>
Tensor<T> embed_track_points(const TrackSet<T>& tracks, const TracktentionParams<T>& params);

/// B[i][j] = -|P_i - pos(j)|^2 / (2 sigma^2) for points[M x 2] -> [M x HW].
template <typename T>
Tensor<T> gaussian_bias(const Tensor<T>& points, const Grid& grid, double sigma);

/// Directional derivative of one bias row w.r.t. its track point along `dir`:
/// dB[j] = -(P - pos(j)) . dir / sigma^2.
std::vector<double> gaussian_bias_derivative(double x, double y, std::array<double, 2> dir,
                                             const Grid& grid, double sigma);

/// Per-head layer normalization (no bias, eps 1e-6) over the last axis of
/// x[... x heads*d_h]; `gain` has heads*d_h entries.
template <typename T>
Tensor<T> qk_norm(const Tensor<T>& x, std::size_t heads, const Tensor<T>& gain);

/// Pre-softmax sampling logits Q K^T / sqrt(d_h) + B for one frame:
/// tokens[M x d_f], features[HW x d_f], points[M x 2] -> [heads x M x HW].
template <typename T>
Tensor<T> sampling_logits(const Tensor<T>& tokens, const Tensor<T>& features,
                          const Tensor<T>& points, const Grid& grid,
                          const TracktentionParams<T>& params);

template <typename T>
struct SamplingResult {
  Tensor<T> tokens;     ///< S, [T x M x d_f]
  Tensor<T> attention;  ///< A, [T x heads x M x HW]
};

template <typename T>
struct SplattingResult {
  Tensor<T> delta;      ///< W_out-projected update, [T x H x W x d_f]
  Tensor<T> attention;  ///< A', [T x heads x HW x M]
};

/// Image -> track cross-attention. features is [T x H x W x d_f].
template <typename T>
SamplingResult<T> attentional_sampling(const Tensor<T>& features, const Tensor<T>& tokens,
                                       const TrackSet<T>& tracks,
                                       const TracktentionParams<T>& params);

template <typename T>
SamplingResult<T> attentional_sampling(const Tensor<T>& features, const Tensor<T>& tokens,
                                       const TrackSet<T>& tracks, const Grid& grid,
                                       const TracktentionParams<T>& params);

/// Track -> image cross-attention with grid-coordinate queries.
template <typename T>
SplattingResult<T> attentional_splatting(const Tensor<T>& updated_tokens,
                                         const TrackSet<T>& tracks, const Grid& grid,
                                         const TracktentionParams<T>& params);

struct GradCheckResult {
  double analytic = 0;
  double finite_diff = 0;
  double rel_err = 0;

  bool passed(double tol = 1e-3) const { return rel_err < tol; }
};

inline constexpr double kGradCheckStep = 1e-4;

/// Compares the closed-form directional derivative of sum(S) w.r.t. track
/// point (t, i) with central finite differences. Requires W_Q == 0, where
/// A = softmax(B) and dA = A o (dB - <A, dB>). rel_err uses a 1e-8 floor in
/// the denominator.
GradCheckResult bias_grad_check(const Tensor<double>& features, const TrackSet<double>& tracks,
                                const TracktentionParams<double>& params, std::size_t track,
                                std::size_t frame, std::array<double, 2> direction);

}  // namespace tracktention
