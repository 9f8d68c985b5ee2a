#include "tracktention/baselines.hpp"

#include <cmath>
#include <string>

#include "tracktention/ops.hpp"
#include "tracktention/parallel.hpp"
#include "tracktention/track_transformer.hpp"

namespace tracktention {

BaselineKind parse_baseline_kind(std::string_view name) {
  if (name == "temporal" || name == "temporal_attn") return BaselineKind::temporal_attn;
  if (name == "spatial" || name == "spatial_attn") return BaselineKind::spatial_attn;
  if (name == "joint" || name == "joint_st_attn") return BaselineKind::joint_st_attn;
  if (name == "conv3d") return BaselineKind::conv3d;
  throw ConfigError("unknown baseline '" + std::string(name) + "'");
}

std::string_view to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::temporal_attn: return "temporal_attn";
    case BaselineKind::spatial_attn: return "spatial_attn";
    case BaselineKind::joint_st_attn: return "joint_st_attn";
    case BaselineKind::conv3d: return "conv3d";
  }
  return "?";
}

template <typename T>
void AttentionParams<T>::validate() const {
  if (heads == 0 || d_k % heads != 0) throw ConfigError("attention: d_k must be divisible by heads");
  if (w_q.shape() != Shape{d_f, d_k} || w_k.shape() != Shape{d_f, d_k} ||
      w_v.shape() != Shape{d_f, d_k} || w_o.shape() != Shape{d_k, d_f}) {
    throw ConfigError("attention weights must be [d_f x d_k] (q, k, v) and [d_k x d_f] (o)");
  }
}

template struct AttentionParams<float>;
template struct AttentionParams<double>;

template <typename T>
AttentionParams<T> init_attention_params(Rng& rng, std::size_t d_f, std::size_t d_k,
                                         std::size_t heads, double std) {
  AttentionParams<T> p;
  p.d_f = d_f;
  p.d_k = d_k;
  p.heads = heads;
  p.w_q = rng_normal<T>(rng, {d_f, d_k}, std);
  p.w_k = rng_normal<T>(rng, {d_f, d_k}, std);
  p.w_v = rng_normal<T>(rng, {d_f, d_k}, std);
  p.w_o = rng_normal<T>(rng, {d_k, d_f}, std);
  p.validate();
  return p;
}

namespace {

/// Multi-head self-attention over n rows of x (row stride d_f), written to out.
template <typename T>
void attend(std::span<const T> x, std::size_t n, const AttentionParams<T>& p, std::span<T> out,
            std::span<T> attn) {
  const std::size_t dk = p.d_k;
  const std::size_t dh = dk / p.heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<T> q(n * dk), k(n * dk), v(n * dk), ctx(n * dk, T{0}), row(n);
  kernel::matmul<T>(x, p.w_q.data(), q, n, p.d_f, dk);
  kernel::matmul<T>(x, p.w_k.data(), k, n, p.d_f, dk);
  kernel::matmul<T>(x, p.w_v.data(), v, n, p.d_f, dk);
  for (std::size_t h = 0; h < p.heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto qi = std::span<const T>(q).subspan(i * dk + h * dh, dh);
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = kernel::dot<T>(qi, std::span<const T>(k).subspan(j * dk + h * dh, dh)) * scale;
      }
      kernel::softmax<T>(row);
      if (!attn.empty()) {
        std::copy(row.begin(), row.end(), attn.begin() + static_cast<std::ptrdiff_t>((h * n + i) * n));
      }
      T* dst = ctx.data() + i * dk + h * dh;
      for (std::size_t j = 0; j < n; ++j) {
        const T* src = v.data() + j * dk + h * dh;
        for (std::size_t c = 0; c < dh; ++c) dst[c] += row[j] * src[c];
      }
    }
  }
  kernel::matmul<T>(ctx, p.w_o.data(), out, n, dk, p.d_f);
}

template <typename T>
void check_video(const Tensor<T>& f, std::size_t d_f) {
  if (f.rank() != 4) throw DimensionError("feature map must be [T x H x W x D], got " + shape_string(f.shape()));
  if (f.dim(3) != d_f) throw DimensionError("feature width does not match attention d_f");
}

template <typename T>
Tensor<T> with_time_pe(const Tensor<T>& f) {
  const std::size_t frames = f.dim(0), cells = f.dim(1) * f.dim(2), d = f.dim(3);
  const Tensor<T> pe = time_pos_encoding<T>(frames, d);
  Tensor<T> out = f;
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t j = 0; j < cells; ++j)
      for (std::size_t c = 0; c < d; ++c) out[(t * cells + j) * d + c] += pe(t, c);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const AttentionParams<T>& params, Tensor<T>* attention) {
  params.validate();
  if (x.rank() != 2 || x.dim(1) != params.d_f) throw DimensionError("self_attention expects [N x d_f]");
  const std::size_t n = x.dim(0);
  Tensor<T> out({n, params.d_f});
  std::span<T> attn;
  if (attention) {
    *attention = Tensor<T>({params.heads, n, n});
    attn = attention->data();
  }
  attend<T>(x.data(), n, params, out.data(), attn);
  return out;
}

template <typename T>
Tensor<T> temporal_attention(const Tensor<T>& features, const AttentionParams<T>& params,
                             AttentionMaps<T>* maps) {
  params.validate();
  check_video(features, params.d_f);
  const Tensor<T> f = params.use_time_pe ? with_time_pe(features) : features;
  const std::size_t frames = f.dim(0), cells = f.dim(1) * f.dim(2), d = params.d_f;
  Tensor<T> out(f.shape());
  if (maps) maps->assign(cells, Tensor<T>({params.heads, frames, frames}));
  parallel_for(cells, [&](std::size_t j) {
    std::vector<T> seq(frames * d), res(frames * d);
    for (std::size_t t = 0; t < frames; ++t)
      std::copy_n(f.data().begin() + static_cast<std::ptrdiff_t>((t * cells + j) * d), d,
                  seq.begin() + static_cast<std::ptrdiff_t>(t * d));
    attend<T>(seq, frames, params, res, maps ? (*maps)[j].data() : std::span<T>());
    for (std::size_t t = 0; t < frames; ++t)
      std::copy_n(res.begin() + static_cast<std::ptrdiff_t>(t * d), d,
                  out.data().begin() + static_cast<std::ptrdiff_t>((t * cells + j) * d));
  });
  return out;
}

template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& features, const AttentionParams<T>& params,
                            AttentionMaps<T>* maps) {
  params.validate();
  check_video(features, params.d_f);
  const Tensor<T> f = params.use_time_pe ? with_time_pe(features) : features;
  const std::size_t frames = f.dim(0), cells = f.dim(1) * f.dim(2);
  Tensor<T> out(f.shape());
  if (maps) maps->assign(frames, Tensor<T>({params.heads, cells, cells}));
  parallel_for(frames, [&](std::size_t t) {
    attend<T>(f.slice(t), cells, params, out.slice(t), maps ? (*maps)[t].data() : std::span<T>());
  });
  return out;
}

template <typename T>
Tensor<T> joint_st_attention(const Tensor<T>& features, const AttentionParams<T>& params,
                             AttentionMaps<T>* maps, std::size_t token_guard) {
  params.validate();
  check_video(features, params.d_f);
  const std::size_t tokens = features.size() / params.d_f;
  if (tokens > token_guard) {
    throw ResourceError("joint attention over " + std::to_string(tokens) +
                        " tokens exceeds the guard of " + std::to_string(token_guard));
  }
  const Tensor<T> f = params.use_time_pe ? with_time_pe(features) : features;
  Tensor<T> out(f.shape());
  if (maps) maps->assign(1, Tensor<T>({params.heads, tokens, tokens}));
  attend<T>(f.data(), tokens, params, out.data(), maps ? (*maps)[0].data() : std::span<T>());
  return out;
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& features, const Tensor<T>& kernel) {
  if (features.rank() != 4) throw DimensionError("conv3d input must be [T x H x W x D]");
  if (kernel.rank() != 5) throw DimensionError("conv3d kernel must be [kt x kh x kw x d_in x d_out]");
  const std::size_t kt = kernel.dim(0), kh = kernel.dim(1), kw = kernel.dim(2);
  if (kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0) {
    throw ConfigError("conv3d kernel extents must be odd, got " + shape_string(kernel.shape()));
  }
  const std::size_t frames = features.dim(0), height = features.dim(1), width = features.dim(2);
  const std::size_t d_in = features.dim(3);
  if (kernel.dim(3) != d_in) throw DimensionError("conv3d kernel input width does not match features");
  const std::size_t d_out = kernel.dim(4);
  const auto pt = static_cast<std::ptrdiff_t>(kt / 2), ph = static_cast<std::ptrdiff_t>(kh / 2),
             pw = static_cast<std::ptrdiff_t>(kw / 2);

  Tensor<T> out({frames, height, width, d_out});
  parallel_for(frames, [&](std::size_t t) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        T* dst = &out(t, y, x, 0);
        for (std::size_t a = 0; a < kt; ++a) {
          const auto st = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(a) - pt;
          if (st < 0 || st >= static_cast<std::ptrdiff_t>(frames)) continue;
          for (std::size_t b = 0; b < kh; ++b) {
            const auto sy = static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(b) - ph;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) continue;
            for (std::size_t c = 0; c < kw; ++c) {
              const auto sx = static_cast<std::ptrdiff_t>(x) + static_cast<std::ptrdiff_t>(c) - pw;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(width)) continue;
              const T* src = &features(static_cast<std::size_t>(st), static_cast<std::size_t>(sy),
                                       static_cast<std::size_t>(sx), 0);
              const T* kern = &kernel(a, b, c, 0, 0);
              for (std::size_t i = 0; i < d_in; ++i) {
                const T s = src[i];
                const T* krow = kern + i * d_out;
                for (std::size_t o = 0; o < d_out; ++o) dst[o] += s * krow[o];
              }
            }
          }
        }
      }
    }
  });
  return out;
}

#define TT_INSTANTIATE(T)                                                                         \
  template AttentionParams<T> init_attention_params<T>(Rng&, std::size_t, std::size_t,            \
                                                       std::size_t, double);                      \
  template Tensor<T> self_attention(const Tensor<T>&, const AttentionParams<T>&, Tensor<T>*);     \
  template Tensor<T> temporal_attention(const Tensor<T>&, const AttentionParams<T>&,              \
                                        AttentionMaps<T>*);                                       \
  template Tensor<T> spatial_attention(const Tensor<T>&, const AttentionParams<T>&,               \
                                       AttentionMaps<T>*);                                        \
  template Tensor<T> joint_st_attention(const Tensor<T>&, const AttentionParams<T>&,              \
                                        AttentionMaps<T>*, std::size_t);                          \
  template Tensor<T> conv3d(const Tensor<T>&, const Tensor<T>&);

TT_INSTANTIATE(float)
TT_INSTANTIATE(double)
#undef TT_INSTANTIATE

}  // namespace tracktention
