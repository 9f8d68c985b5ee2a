#include "tracktention/trackatt.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "tracktention/ops.hpp"
#include "tracktention/parallel.hpp"
#include "tracktention/rope.hpp"

namespace tracktention {

template <typename T>
void TracktentionParams<T>::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(heads >= 1, "heads must be >= 1");
  require(d_f % 4 == 0, "d_f must be divisible by 4, got " + std::to_string(d_f));
  require(d_k % heads == 0, "d_k must be divisible by heads");
  require(head_dim() % 4 == 0, "per-head key width must be divisible by 4, got " + std::to_string(head_dim()));
  require(d_f % heads == 0, "d_f must be divisible by heads");
  require(sigma > 0, "sigma must be > 0");
  require(rope_base > 0, "rope_base must be > 0");
  auto shape_is = [&](const Tensor<T>& t, Shape s, const char* name) {
    require(t.shape() == s, std::string(name) + " must be " + shape_string(s) + ", got " +
                                shape_string(t.shape()));
  };
  shape_is(w_q, {d_f, d_k}, "w_q");
  shape_is(w_k, {d_f, d_k}, "w_k");
  shape_is(w_out, {d_f, d_f}, "w_out");
  shape_is(q_norm_gain, {d_k}, "q_norm_gain");
  shape_is(k_norm_gain, {d_k}, "k_norm_gain");
  shape_is(embed_proj, {d_f, d_f}, "embed_proj");
}

template <typename T>
TracktentionParams<T> TracktentionParams<T>::zeros(std::size_t d_f, std::size_t d_k,
                                                   std::size_t heads) {
  TracktentionParams p;
  p.d_f = d_f;
  p.d_k = d_k;
  p.heads = heads;
  p.w_q = Tensor<T>({d_f, d_k});
  p.w_k = Tensor<T>({d_f, d_k});
  p.w_out = Tensor<T>({d_f, d_f});
  p.q_norm_gain = Tensor<T>({d_k}, T{1});
  p.k_norm_gain = Tensor<T>({d_k}, T{1});
  p.embed_proj = Tensor<T>::identity(d_f);
  return p;
}

template struct TracktentionParams<float>;
template struct TracktentionParams<double>;

namespace {

template <typename T>
void check_finite(const Tensor<T>& t, const char* name) {
  for (T v : t.data()) {
    if (std::isnan(v)) throw NumericError(std::string(name) + " contains NaN");
  }
}

/// rows[n x d_k] <- rope(qk_norm(rows)) with one position per row.
template <typename T, typename PosFn>
void norm_and_rotate(std::span<T> rows, std::size_t n, const TracktentionParams<T>& p,
                     const Tensor<T>& gain, std::span<const double> freqs, PosFn pos) {
  const std::size_t dh = p.head_dim();
  for (std::size_t i = 0; i < n; ++i) {
    const auto [x, y] = pos(i);
    for (std::size_t h = 0; h < p.heads; ++h) {
      auto seg = rows.subspan(i * p.d_k + h * dh, dh);
      kernel::layer_norm<T>(seg, gain.data().subspan(h * dh, dh), {}, static_cast<T>(kQkNormEps));
      rope_rotate<T>(seg, x, y, freqs);
    }
  }
}

template <typename T>
T logit(std::span<const T> q, std::span<const T> k, std::size_t h, std::size_t dh, T scale,
        T bias) {
  return kernel::dot<T>(q.subspan(h * dh, dh), k.subspan(h * dh, dh)) * scale + bias;
}

/// Multi-head cross-attention of n_q query rows over n_k key rows with an
/// additive bias[n_q x n_k]. Values are unprojected and split per head by
/// channel block. Masked queries yield zero rows; masked keys are excluded.
template <typename T>
void cross_attend(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                  std::span<const T> bias, std::size_t n_q, std::size_t n_k,
                  const TracktentionParams<T>& p, const std::vector<std::uint8_t>* query_keep,
                  const std::vector<std::uint8_t>* key_keep, std::span<T> out, std::span<T> attn) {
  const std::size_t dh = p.head_dim();
  const std::size_t dv = p.value_head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const T neg_inf = -std::numeric_limits<T>::infinity();
  std::fill(out.begin(), out.end(), T{0});
  for (std::size_t h = 0; h < p.heads; ++h) {
    for (std::size_t i = 0; i < n_q; ++i) {
      auto row = attn.subspan((h * n_q + i) * n_k, n_k);
      if (query_keep && !(*query_keep)[i]) {
        std::fill(row.begin(), row.end(), T{0});
        continue;
      }
      const auto qi = q.subspan(i * p.d_k, p.d_k);
      bool any = false;
      for (std::size_t j = 0; j < n_k; ++j) {
        if (key_keep && !(*key_keep)[j]) {
          row[j] = neg_inf;
          continue;
        }
        row[j] = logit<T>(qi, k.subspan(j * p.d_k, p.d_k), h, dh, scale, bias[i * n_k + j]);
        any = true;
      }
      if (!any) {
        std::fill(row.begin(), row.end(), T{0});
        continue;
      }
      kernel::softmax<T>(row);
      T* dst = out.data() + i * p.d_f + h * dv;
      for (std::size_t j = 0; j < n_k; ++j) {
        const T a = row[j];
        const T* src = v.data() + j * p.d_f + h * dv;
        for (std::size_t c = 0; c < dv; ++c) dst[c] += a * src[c];
      }
    }
  }
}

template <typename T>
std::vector<std::uint8_t> visible_mask(const TrackSet<T>& tracks, std::size_t t) {
  std::vector<std::uint8_t> keep(tracks.count());
  for (std::size_t m = 0; m < tracks.count(); ++m) keep[m] = tracks.is_visible(t, m) ? 1 : 0;
  return keep;
}

/// Q, K, V for frame-local sampling.
template <typename T>
struct SamplingOperands {
  std::vector<T> q, k, v;
  Tensor<T> bias;
};

template <typename T>
SamplingOperands<T> sampling_operands(std::span<const T> tokens, std::span<const T> features,
                                      std::span<const T> points, std::size_t m,
                                      const Grid& grid, const TracktentionParams<T>& p,
                                      std::span<const double> freqs_h,
                                      std::span<const double> freqs_v) {
  const std::size_t hw = grid.cells();
  SamplingOperands<T> ops;
  ops.q.resize(m * p.d_k);
  ops.k.resize(hw * p.d_k);
  kernel::matmul<T>(tokens, p.w_q.data(), ops.q, m, p.d_f, p.d_k);
  kernel::matmul<T>(features, p.w_k.data(), ops.k, hw, p.d_f, p.d_k);
  auto track_pos = [&](std::size_t i) {
    return std::pair<double, double>(points[2 * i], points[2 * i + 1]);
  };
  auto grid_pos = [&](std::size_t j) { return std::pair<double, double>(grid.x(j), grid.y(j)); };
  norm_and_rotate<T>(ops.q, m, p, p.q_norm_gain, freqs_h, track_pos);
  norm_and_rotate<T>(ops.k, hw, p, p.k_norm_gain, freqs_h, grid_pos);
  ops.v.assign(features.begin(), features.end());
  if (p.rope_on_values) {
    for (std::size_t j = 0; j < hw; ++j) {
      rope_rotate<T>(std::span<T>(ops.v).subspan(j * p.d_f, p.d_f), grid.x(j), grid.y(j), freqs_v);
    }
  }
  ops.bias = gaussian_bias(Tensor<T>({m, 2}, std::vector<T>(points.begin(), points.end())), grid,
                           p.sigma);
  return ops;
}

template <typename T>
void check_features(const Tensor<T>& features, const Grid& grid, std::size_t d_f) {
  if (features.rank() != 4) {
    throw DimensionError("feature map must be [T x H x W x D], got " + shape_string(features.shape()));
  }
  if (features.dim(1) != grid.height || features.dim(2) != grid.width) {
    throw DimensionError("feature map grid " + std::to_string(features.dim(1)) + "x" +
                         std::to_string(features.dim(2)) + " does not match " +
                         std::to_string(grid.height) + "x" + std::to_string(grid.width));
  }
  if (features.dim(3) != d_f) {
    throw DimensionError("feature width " + std::to_string(features.dim(3)) + " != d_f " +
                         std::to_string(d_f));
  }
}

}  // namespace

template <typename T>
Tensor<T> embed_points(const Tensor<T>& points, const TracktentionParams<T>& params) {
  if (points.shape().back() != 2) throw DimensionError("points must have a trailing (x, y) axis");
  const std::size_t n = points.size() / 2;
  const auto freqs = rope_frequencies(params.d_f, params.rope_base);
  std::vector<T> raw(n * params.d_f);
  for (std::size_t i = 0; i < n; ++i) {
    sinusoid_embed<T>(std::span<T>(raw).subspan(i * params.d_f, params.d_f), points[2 * i],
                      points[2 * i + 1], freqs);
  }
  Tensor<T> out({n, params.d_f});
  kernel::matmul<T>(raw, params.embed_proj.data(), out.data(), n, params.d_f, params.d_f);
  return out;
}

template <typename T>
Tensor<T> embed_track_points(const TrackSet<T>& tracks, const TracktentionParams<T>& params) {
  tracks.validate();
  return embed_points(tracks.points.reshaped({tracks.frames() * tracks.count(), 2}), params)
      .reshaped({tracks.frames(), tracks.count(), params.d_f});
}

template <typename T>
Tensor<T> gaussian_bias(const Tensor<T>& points, const Grid& grid, double sigma) {
  if (!(sigma > 0)) throw ConfigError("sigma must be > 0");
  if (points.shape().back() != 2) throw DimensionError("points must have a trailing (x, y) axis");
  const std::size_t m = points.size() / 2;
  const std::size_t hw = grid.cells();
  const double denom = 2.0 * sigma * sigma;
  Tensor<T> out({m, hw});
  for (std::size_t i = 0; i < m; ++i) {
    const double px = points[2 * i], py = points[2 * i + 1];
    for (std::size_t j = 0; j < hw; ++j) {
      const double dx = px - grid.x(j), dy = py - grid.y(j);
      out[i * hw + j] = static_cast<T>(-(dx * dx + dy * dy) / denom);
    }
  }
  return out;
}

std::vector<double> gaussian_bias_derivative(double x, double y, std::array<double, 2> dir,
                                             const Grid& grid, double sigma) {
  std::vector<double> out(grid.cells());
  const double s2 = sigma * sigma;
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = -((x - grid.x(j)) * dir[0] + (y - grid.y(j)) * dir[1]) / s2;
  }
  return out;
}

template <typename T>
Tensor<T> qk_norm(const Tensor<T>& x, std::size_t heads, const Tensor<T>& gain) {
  const std::size_t d = x.shape().back();
  if (heads == 0 || d % heads != 0) throw ConfigError("qk_norm: width not divisible by heads");
  if (gain.size() != d) throw DimensionError("qk_norm: gain must have " + std::to_string(d) + " entries");
  const std::size_t dh = d / heads;
  Tensor<T> out = x;
  auto data = out.data();
  for (std::size_t r = 0; r < x.size() / d; ++r) {
    for (std::size_t h = 0; h < heads; ++h) {
      kernel::layer_norm<T>(data.subspan(r * d + h * dh, dh), gain.data().subspan(h * dh, dh), {},
                            static_cast<T>(kQkNormEps));
    }
  }
  return out;
}

template <typename T>
Tensor<T> sampling_logits(const Tensor<T>& tokens, const Tensor<T>& features,
                          const Tensor<T>& points, const Grid& grid,
                          const TracktentionParams<T>& params) {
  params.validate();
  const std::size_t m = points.size() / 2;
  const std::size_t hw = grid.cells();
  if (tokens.size() != m * params.d_f || features.size() != hw * params.d_f) {
    throw DimensionError("sampling_logits: inconsistent operand sizes");
  }
  const auto freqs_h = rope_frequencies(params.head_dim(), params.rope_base);
  const auto freqs_v = rope_frequencies(params.d_f, params.rope_base);
  const auto ops = sampling_operands<T>(tokens.data(), features.data(), points.data(), m, grid,
                                        params, freqs_h, freqs_v);
  const std::size_t dh = params.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor<T> out({params.heads, m, hw});
  for (std::size_t h = 0; h < params.heads; ++h)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < hw; ++j)
        out(h, i, j) = logit<T>(std::span<const T>(ops.q).subspan(i * params.d_k, params.d_k),
                                std::span<const T>(ops.k).subspan(j * params.d_k, params.d_k), h,
                                dh, scale, ops.bias[i * hw + j]);
  return out;
}

template <typename T>
SamplingResult<T> attentional_sampling(const Tensor<T>& features, const Tensor<T>& tokens,
                                       const TrackSet<T>& tracks,
                                       const TracktentionParams<T>& params) {
  return attentional_sampling(features, tokens, tracks, Grid::of(features), params);
}

template <typename T>
SamplingResult<T> attentional_sampling(const Tensor<T>& features, const Tensor<T>& tokens,
                                       const TrackSet<T>& tracks, const Grid& grid,
                                       const TracktentionParams<T>& params) {
  params.validate();
  tracks.validate();
  check_features(features, grid, params.d_f);
  const std::size_t frames = features.dim(0);
  const std::size_t m = tracks.count();
  const std::size_t hw = grid.cells();
  if (tracks.frames() != frames) {
    throw DimensionError("feature map has T=" + std::to_string(frames) + " but tracks have T=" +
                         std::to_string(tracks.frames()));
  }
  if (tokens.shape() != Shape{frames, m, params.d_f}) {
    throw DimensionError("track tokens must be " + shape_string({frames, m, params.d_f}) +
                         ", got " + shape_string(tokens.shape()));
  }
  check_finite(features, "feature map");
  check_finite(tokens, "track tokens");

  const auto freqs_h = rope_frequencies(params.head_dim(), params.rope_base);
  const auto freqs_v = rope_frequencies(params.d_f, params.rope_base);
  SamplingResult<T> result{Tensor<T>({frames, m, params.d_f}),
                           Tensor<T>({frames, params.heads, m, hw})};
  const bool masked = params.mask_invisible && tracks.visible.has_value();

  parallel_for(frames, [&](std::size_t t) {
    const auto ops = sampling_operands<T>(tokens.slice(t), features.slice(t), tracks.points.slice(t),
                                          m, grid, params, freqs_h, freqs_v);
    std::vector<std::uint8_t> keep;
    if (masked) keep = visible_mask(tracks, t);
    cross_attend<T>(ops.q, ops.k, ops.v, ops.bias.data(), m, hw, params, masked ? &keep : nullptr,
                    nullptr, result.tokens.slice(t), result.attention.slice(t));
  });
  return result;
}

template <typename T>
SplattingResult<T> attentional_splatting(const Tensor<T>& updated_tokens,
                                         const TrackSet<T>& tracks, const Grid& grid,
                                         const TracktentionParams<T>& params) {
  params.validate();
  tracks.validate();
  const std::size_t frames = tracks.frames();
  const std::size_t m = tracks.count();
  if (m == 0) throw ConfigError("splatting needs at least one track");
  const std::size_t hw = grid.cells();
  if (updated_tokens.shape() != Shape{frames, m, params.d_f}) {
    throw DimensionError("updated track tokens must be " + shape_string({frames, m, params.d_f}) +
                         ", got " + shape_string(updated_tokens.shape()));
  }
  check_finite(updated_tokens, "track tokens");

  const auto freqs_h = rope_frequencies(params.head_dim(), params.rope_base);
  const auto freqs_v = rope_frequencies(params.d_f, params.rope_base);

  // Grid queries are frame-independent.
  Tensor<T> grid_points({hw, 2});
  for (std::size_t j = 0; j < hw; ++j) {
    grid_points[2 * j] = static_cast<T>(grid.x(j));
    grid_points[2 * j + 1] = static_cast<T>(grid.y(j));
  }
  const Tensor<T> grid_tokens = embed_points(grid_points, params);
  std::vector<T> q(hw * params.d_k);
  kernel::matmul<T>(grid_tokens.data(), params.w_q.data(), q, hw, params.d_f, params.d_k);
  norm_and_rotate<T>(q, hw, params, params.q_norm_gain, freqs_h,
                     [&](std::size_t j) { return std::pair<double, double>(grid.x(j), grid.y(j)); });

  SplattingResult<T> result{Tensor<T>({frames, grid.height, grid.width, params.d_f}),
                            Tensor<T>({frames, params.heads, hw, m})};
  const bool masked = params.mask_invisible && tracks.visible.has_value();

  parallel_for(frames, [&](std::size_t t) {
    const auto tok = updated_tokens.slice(t);
    const auto pts = tracks.points.slice(t);
    auto track_pos = [&](std::size_t i) { return std::pair<double, double>(pts[2 * i], pts[2 * i + 1]); };
    std::vector<T> k(m * params.d_k);
    kernel::matmul<T>(tok, params.w_k.data(), k, m, params.d_f, params.d_k);
    norm_and_rotate<T>(k, m, params, params.k_norm_gain, freqs_h, track_pos);
    std::vector<T> v(tok.begin(), tok.end());
    if (params.rope_on_values) {
      for (std::size_t i = 0; i < m; ++i) {
        rope_rotate<T>(std::span<T>(v).subspan(i * params.d_f, params.d_f), pts[2 * i],
                       pts[2 * i + 1], freqs_v);
      }
    }
    const Tensor<T> bias =
        transpose(gaussian_bias(Tensor<T>({m, 2}, std::vector<T>(pts.begin(), pts.end())), grid,
                                params.sigma));
    std::vector<std::uint8_t> keep;
    if (masked) keep = visible_mask(tracks, t);
    std::vector<T> mixed(hw * params.d_f);
    cross_attend<T>(q, k, v, bias.data(), hw, m, params, nullptr, masked ? &keep : nullptr, mixed,
                    result.attention.slice(t));
    kernel::matmul<T>(mixed, params.w_out.data(), result.delta.slice(t), hw, params.d_f, params.d_f);
  });
  return result;
}

GradCheckResult bias_grad_check(const Tensor<double>& features, const TrackSet<double>& tracks,
                                const TracktentionParams<double>& params, std::size_t track,
                                std::size_t frame, std::array<double, 2> direction) {
  params.validate();
  for (double w : params.w_q.data()) {
    if (w != 0.0) throw ConfigError("bias_grad_check requires W_Q == 0 (bias-only attention)");
  }
  if (track >= tracks.count() || frame >= tracks.frames()) {
    throw ConfigError("bias_grad_check: track/frame index out of range");
  }
  const double norm = std::hypot(direction[0], direction[1]);
  if (!(norm > 0)) throw ConfigError("bias_grad_check: direction must be non-zero");
  direction = {direction[0] / norm, direction[1] / norm};

  const Grid grid = Grid::of(features);
  const std::size_t hw = grid.cells();
  const std::size_t d = params.d_f;

  // Closed form: with W_Q = 0 every head attends with A = softmax(B) and
  // sum(S) = sum_j A_j * (sum_c V_jc), so only the row-sum of V matters.
  const double px = tracks.x(frame, track), py = tracks.y(frame, track);
  Tensor<double> point({1, 2}, {px, py});
  Tensor<double> a = softmax_rows(gaussian_bias(point, grid, params.sigma));
  const auto db = gaussian_bias_derivative(px, py, direction, grid, params.sigma);
  const auto freqs_v = rope_frequencies(d, params.rope_base);
  const auto fv = features.slice(frame);
  double mean_db = 0;
  for (std::size_t j = 0; j < hw; ++j) mean_db += a[j] * db[j];
  double analytic = 0;
  std::vector<double> v(d);
  for (std::size_t j = 0; j < hw; ++j) {
    std::copy_n(fv.begin() + static_cast<std::ptrdiff_t>(j * d), d, v.begin());
    if (params.rope_on_values) rope_rotate<double>(v, grid.x(j), grid.y(j), freqs_v);
    double row_sum = 0;
    for (double c : v) row_sum += c;
    analytic += a[j] * (db[j] - mean_db) * row_sum;
  }

  const Tensor<double> tokens = embed_track_points(tracks, params);
  auto objective = [&](double step) {
    TrackSet<double> moved = tracks;
    moved.points(frame, track, 0) += step * direction[0];
    moved.points(frame, track, 1) += step * direction[1];
    const auto s = attentional_sampling(features, tokens, moved, params).tokens;
    double total = 0;
    for (double x : s.data()) total += x;
    return total;
  };
  const double h = kGradCheckStep;
  const double fd = (objective(h) - objective(-h)) / (2.0 * h);

  GradCheckResult r;
  r.analytic = analytic;
  r.finite_diff = fd;
  r.rel_err = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-8});
  return r;
}

#define TT_INSTANTIATE(T)                                                                          \
  template Tensor<T> embed_points(const Tensor<T>&, const TracktentionParams<T>&);                 \
  template Tensor<T> embed_track_points(const TrackSet<T>&, const TracktentionParams<T>&);         \
  template Tensor<T> gaussian_bias(const Tensor<T>&, const Grid&, double);                         \
  template Tensor<T> qk_norm(const Tensor<T>&, std::size_t, const Tensor<T>&);                     \
  template Tensor<T> sampling_logits(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                     const Grid&, const TracktentionParams<T>&);                   \
  template SamplingResult<T> attentional_sampling(const Tensor<T>&, const Tensor<T>&,              \
                                                  const TrackSet<T>&,                              \
                                                  const TracktentionParams<T>&);                   \
  template SamplingResult<T> attentional_sampling(const Tensor<T>&, const Tensor<T>&,              \
                                                  const TrackSet<T>&, const Grid&,                 \
                                                  const TracktentionParams<T>&);                   \
  template SplattingResult<T> attentional_splatting(const Tensor<T>&, const TrackSet<T>&,          \
                                                    const Grid&, const TracktentionParams<T>&);

TT_INSTANTIATE(float)
TT_INSTANTIATE(double)
#undef TT_INSTANTIATE

}  // namespace tracktention
