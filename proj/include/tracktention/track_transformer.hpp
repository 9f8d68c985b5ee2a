#pragma once

#include <cstddef>
#include <vector>

#include "tracktention/rng.hpp"
#include "tracktention/tensor.hpp"

namespace tracktention {

/// One pre-norm encoder layer: x += MHSA(LN1(x)); x += W_2 GELU(W_1 LN2(x)).
template <typename T>
struct EncoderLayerParams {
  Tensor<T> w_q, w_k, w_v, w_o;  ///< [d x d]
  Tensor<T> w_1;                 ///< [d x 4d]
  Tensor<T> w_2;                 ///< [4d x d]
  Tensor<T> ln1_gain, ln1_bias;  ///< [d]
  Tensor<T> ln2_gain, ln2_bias;  ///< [d]
};

/// Temporal encoder applied to each track independently (tracks are the batch axis).
template <typename T>
struct TrackTransformerParams {
  std::size_t d_f = 64;
  std::size_t heads = 4;
  double ln_eps = 1e-5;
  std::vector<EncoderLayerParams<T>> layers;
  Tensor<T> time_pe;  ///< [T_max x d_f], added once before the first layer

  std::size_t max_frames() const { return time_pe.dim(0); }
  void validate() const;

  template <typename U>
  TrackTransformerParams<U> cast() const;
};

/// PE[t][2i] = sin(t / 10000^(2i/d)), PE[t][2i+1] = cos(same).
template <typename T>
Tensor<T> time_pos_encoding(std::size_t frames, std::size_t d);

/// Standard initialization: normal(0, std) weights, unit LN gains, zero LN biases.
template <typename T>
TrackTransformerParams<T> init_track_transformer(Rng& rng, std::size_t d_f, std::size_t heads,
                                                 std::size_t num_layers, std::size_t max_frames,
                                                 double std = 0.02);

/// Parameters that make the encoder a near-uniform temporal average on inputs
/// with zero channel mean: `out_t ~= mean_s(x_s) + residual_weight * (x_t - mean_s(x_s))`.
/// The layer norms are driven into their linear regime (large eps and gain),
/// attention is uniform (W_q = W_k = 0), and the feed-forward block uses
/// GELU(z) - GELU(-z) = z to rescale the residual stream. The time PE is zero.
template <typename T>
TrackTransformerParams<T> make_averaging_track_transformer(std::size_t d_f, std::size_t heads,
                                                           std::size_t max_frames,
                                                           double residual_weight = 0.02);

/// Optional capture of the temporal attention maps, [M x layers x heads x T x T].
template <typename T>
struct TrackTransformerTrace {
  Tensor<T> attention;
};

/// S[T x M x d_f] -> updated tokens of the same shape.
template <typename T>
Tensor<T> track_transformer_forward(const Tensor<T>& tokens, const TrackTransformerParams<T>& params,
                                    TrackTransformerTrace<T>* trace = nullptr);

}  // namespace tracktention
