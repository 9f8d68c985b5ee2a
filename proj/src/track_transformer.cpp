#include "tracktention/track_transformer.hpp"

#include <cmath>
#include <string>

#include "tracktention/ops.hpp"
#include "tracktention/parallel.hpp"

namespace tracktention {

template <typename T>
void TrackTransformerParams<T>::validate() const {
  if (heads == 0 || d_f % heads != 0) throw ConfigError("track transformer: d_f must be divisible by heads");
  if (layers.empty() || layers.size() > 3) {
    throw ConfigError("track transformer supports 1..3 layers, got " + std::to_string(layers.size()));
  }
  if (time_pe.rank() != 2 || time_pe.dim(1) != d_f) {
    throw ConfigError("time PE table must be [T_max x d_f]");
  }
  const std::size_t d = d_f;
  for (const auto& l : layers) {
    for (const Tensor<T>* w : {&l.w_q, &l.w_k, &l.w_v, &l.w_o}) {
      if (w->shape() != Shape{d, d}) throw ConfigError("track transformer attention weights must be d x d");
    }
    if (l.w_1.shape() != Shape{d, 4 * d} || l.w_2.shape() != Shape{4 * d, d}) {
      throw ConfigError("track transformer FFN weights must be d x 4d and 4d x d");
    }
    for (const Tensor<T>* g : {&l.ln1_gain, &l.ln1_bias, &l.ln2_gain, &l.ln2_bias}) {
      if (g->shape() != Shape{d}) throw ConfigError("track transformer layer-norm parameters must have d entries");
    }
  }
}

template <typename T>
template <typename U>
TrackTransformerParams<U> TrackTransformerParams<T>::cast() const {
  TrackTransformerParams<U> p;
  p.d_f = d_f;
  p.heads = heads;
  p.ln_eps = ln_eps;
  p.time_pe = time_pe.template cast<U>();
  for (const auto& l : layers) {
    p.layers.push_back({l.w_q.template cast<U>(), l.w_k.template cast<U>(), l.w_v.template cast<U>(),
                        l.w_o.template cast<U>(), l.w_1.template cast<U>(), l.w_2.template cast<U>(),
                        l.ln1_gain.template cast<U>(), l.ln1_bias.template cast<U>(),
                        l.ln2_gain.template cast<U>(), l.ln2_bias.template cast<U>()});
  }
  return p;
}

template struct TrackTransformerParams<float>;
template struct TrackTransformerParams<double>;
template TrackTransformerParams<double> TrackTransformerParams<float>::cast<double>() const;
template TrackTransformerParams<float> TrackTransformerParams<double>::cast<float>() const;

template <typename T>
Tensor<T> time_pos_encoding(std::size_t frames, std::size_t d) {
  if (d == 0 || d % 2 != 0) throw ConfigError("time PE width must be even");
  Tensor<T> pe({frames, d});
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle =
          static_cast<double>(t) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d));
      pe(t, 2 * i) = static_cast<T>(std::sin(angle));
      pe(t, 2 * i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

template <typename T>
TrackTransformerParams<T> init_track_transformer(Rng& rng, std::size_t d_f, std::size_t heads,
                                                 std::size_t num_layers, std::size_t max_frames,
                                                 double std) {
  TrackTransformerParams<T> p;
  p.d_f = d_f;
  p.heads = heads;
  p.time_pe = time_pos_encoding<T>(max_frames, d_f);
  for (std::size_t i = 0; i < num_layers; ++i) {
    EncoderLayerParams<T> l;
    l.w_q = rng_normal<T>(rng, {d_f, d_f}, std);
    l.w_k = rng_normal<T>(rng, {d_f, d_f}, std);
    l.w_v = rng_normal<T>(rng, {d_f, d_f}, std);
    l.w_o = rng_normal<T>(rng, {d_f, d_f}, std);
    l.w_1 = rng_normal<T>(rng, {d_f, 4 * d_f}, std);
    l.w_2 = rng_normal<T>(rng, {4 * d_f, d_f}, std);
    l.ln1_gain = Tensor<T>({d_f}, T{1});
    l.ln1_bias = Tensor<T>({d_f});
    l.ln2_gain = Tensor<T>({d_f}, T{1});
    l.ln2_bias = Tensor<T>({d_f});
    p.layers.push_back(std::move(l));
  }
  p.validate();
  return p;
}

template <typename T>
TrackTransformerParams<T> make_averaging_track_transformer(std::size_t d_f, std::size_t heads,
                                                           std::size_t max_frames,
                                                           double residual_weight) {
  if (!(residual_weight > 0 && residual_weight < 1)) {
    throw ConfigError("averaging residual weight must lie in (0, 1)");
  }
  TrackTransformerParams<T> p;
  p.d_f = d_f;
  p.heads = heads;
  p.ln_eps = 1e12;
  p.time_pe = Tensor<T>({max_frames, d_f});
  const T gain = static_cast<T>(std::sqrt(p.ln_eps));
  const T attn_scale = static_cast<T>(1.0 / residual_weight - 1.0);
  const T ffn_scale = static_cast<T>(residual_weight - 1.0);

  auto zero_layer = [&] {
    EncoderLayerParams<T> l;
    l.w_q = Tensor<T>({d_f, d_f});
    l.w_k = Tensor<T>({d_f, d_f});
    l.w_v = Tensor<T>({d_f, d_f});
    l.w_o = Tensor<T>({d_f, d_f});
    l.w_1 = Tensor<T>({d_f, 4 * d_f});
    l.w_2 = Tensor<T>({4 * d_f, d_f});
    l.ln1_gain = Tensor<T>({d_f}, gain);
    l.ln1_bias = Tensor<T>({d_f});
    l.ln2_gain = Tensor<T>({d_f}, gain);
    l.ln2_bias = Tensor<T>({d_f});
    return l;
  };

  EncoderLayerParams<T> avg = zero_layer();
  avg.w_v = Tensor<T>::identity(d_f);
  for (std::size_t c = 0; c < d_f; ++c) {
    avg.w_o(c, c) = attn_scale;
    avg.w_1(c, c) = T{1};
    avg.w_1(c, d_f + c) = T{-1};
    avg.w_2(c, c) = ffn_scale;
    avg.w_2(d_f + c, c) = -ffn_scale;
  }
  p.layers.push_back(std::move(avg));
  p.layers.push_back(zero_layer());
  p.validate();
  return p;
}

namespace {

/// Runs every encoder layer over one track's [T x d] sequence in place.
template <typename T>
void encode_track(std::span<T> x, std::size_t frames, const TrackTransformerParams<T>& p,
                  std::span<T> attn_out) {
  const std::size_t d = p.d_f;
  const std::size_t dh = d / p.heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const T eps = static_cast<T>(p.ln_eps);
  std::vector<T> h(frames * d), q(frames * d), k(frames * d), v(frames * d), ctx(frames * d),
      proj(frames * d), hidden(frames * 4 * d), row(frames);

  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const auto& l = p.layers[li];
    std::copy(x.begin(), x.end(), h.begin());
    for (std::size_t t = 0; t < frames; ++t) {
      kernel::layer_norm<T>(std::span<T>(h).subspan(t * d, d), l.ln1_gain.data(), l.ln1_bias.data(), eps);
    }
    kernel::matmul<T>(h, l.w_q.data(), q, frames, d, d);
    kernel::matmul<T>(h, l.w_k.data(), k, frames, d, d);
    kernel::matmul<T>(h, l.w_v.data(), v, frames, d, d);
    std::fill(ctx.begin(), ctx.end(), T{0});
    for (std::size_t hd = 0; hd < p.heads; ++hd) {
      for (std::size_t t = 0; t < frames; ++t) {
        const auto qt = std::span<const T>(q).subspan(t * d + hd * dh, dh);
        for (std::size_t s = 0; s < frames; ++s) {
          row[s] = kernel::dot<T>(qt, std::span<const T>(k).subspan(s * d + hd * dh, dh)) * scale;
        }
        kernel::softmax<T>(row);
        if (!attn_out.empty()) {
          std::copy(row.begin(), row.end(),
                    attn_out.begin() + static_cast<std::ptrdiff_t>(((li * p.heads + hd) * frames + t) * frames));
        }
        T* dst = ctx.data() + t * d + hd * dh;
        for (std::size_t s = 0; s < frames; ++s) {
          const T* src = v.data() + s * d + hd * dh;
          for (std::size_t c = 0; c < dh; ++c) dst[c] += row[s] * src[c];
        }
      }
    }
    kernel::matmul<T>(ctx, l.w_o.data(), proj, frames, d, d);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += proj[i];

    std::copy(x.begin(), x.end(), h.begin());
    for (std::size_t t = 0; t < frames; ++t) {
      kernel::layer_norm<T>(std::span<T>(h).subspan(t * d, d), l.ln2_gain.data(), l.ln2_bias.data(), eps);
    }
    kernel::matmul<T>(h, l.w_1.data(), hidden, frames, d, 4 * d);
    for (T& z : hidden) z = gelu(z);
    kernel::matmul<T>(hidden, l.w_2.data(), proj, frames, 4 * d, d);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += proj[i];
  }
}

}  // namespace

template <typename T>
Tensor<T> track_transformer_forward(const Tensor<T>& tokens, const TrackTransformerParams<T>& params,
                                    TrackTransformerTrace<T>* trace) {
  params.validate();
  if (tokens.rank() != 3 || tokens.dim(2) != params.d_f) {
    throw DimensionError("track tokens must be [T x M x d_f], got " + shape_string(tokens.shape()));
  }
  const std::size_t frames = tokens.dim(0);
  const std::size_t m = tokens.dim(1);
  const std::size_t d = params.d_f;
  if (frames > params.max_frames()) {
    throw ConfigError("sequence length " + std::to_string(frames) + " exceeds time PE table (" +
                      std::to_string(params.max_frames()) + ")");
  }
  const std::size_t attn_block = params.layers.size() * params.heads * frames * frames;
  if (trace) trace->attention = Tensor<T>({m, params.layers.size(), params.heads, frames, frames});

  Tensor<T> out(tokens.shape());
  parallel_for(m, [&](std::size_t track) {
    std::vector<T> x(frames * d);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t c = 0; c < d; ++c) x[t * d + c] = tokens(t, track, c) + params.time_pe(t, c);
    }
    std::span<T> attn;
    if (trace) attn = trace->attention.data().subspan(track * attn_block, attn_block);
    encode_track<T>(x, frames, params, attn);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t c = 0; c < d; ++c) out(t, track, c) = x[t * d + c];
    }
  });
  return out;
}

#define TT_INSTANTIATE(T)                                                                          \
  template Tensor<T> time_pos_encoding<T>(std::size_t, std::size_t);                               \
  template TrackTransformerParams<T> init_track_transformer<T>(Rng&, std::size_t, std::size_t,     \
                                                               std::size_t, std::size_t, double);  \
  template TrackTransformerParams<T> make_averaging_track_transformer<T>(                          \
      std::size_t, std::size_t, std::size_t, double);                                              \
  template Tensor<T> track_transformer_forward(const Tensor<T>&, const TrackTransformerParams<T>&, \
                                               TrackTransformerTrace<T>*);

TT_INSTANTIATE(float)
TT_INSTANTIATE(double)
#undef TT_INSTANTIATE

}  // namespace tracktention
