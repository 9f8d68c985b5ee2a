#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "tracktention/rng.hpp"
#include "tracktention/tensor.hpp"

namespace tracktention {

enum class BaselineKind { temporal_attn, spatial_attn, joint_st_attn, conv3d };

/// Accepts the CLI spellings temporal|spatial|joint|conv3d as well as the enum names.
BaselineKind parse_baseline_kind(std::string_view name);
std::string_view to_string(BaselineKind kind);

/// Multi-head self-attention weights shared by the attention baselines.
template <typename T>
struct AttentionParams {
  std::size_t d_f = 64;
  std::size_t d_k = 64;
  std::size_t heads = 4;
  Tensor<T> w_q, w_k, w_v;  ///< [d_f x d_k]
  Tensor<T> w_o;            ///< [d_k x d_f]
  /// Add the sinusoidal time encoding to the input before attending (off by default).
  bool use_time_pe = false;

  void validate() const;
};

template <typename T>
AttentionParams<T> init_attention_params(Rng& rng, std::size_t d_f, std::size_t d_k,
                                         std::size_t heads, double std = 0.02);

/// Largest token count joint attention will materialize by default.
inline constexpr std::size_t kJointTokenGuard = 16384;

/// Self-attention over one token set x[N x d_f]. When `attention` is non-null
/// it receives the [heads x N x N] map.
template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const AttentionParams<T>& params,
                         Tensor<T>* attention = nullptr);

/// Attention maps collected by the baselines: one [heads x N x N] map per
/// independent sequence (grid position, frame, or the whole video).
template <typename T>
using AttentionMaps = std::vector<Tensor<T>>;

/// Attention over T at each grid position independently. F is [T x H x W x d_f].
template <typename T>
Tensor<T> temporal_attention(const Tensor<T>& features, const AttentionParams<T>& params,
                             AttentionMaps<T>* maps = nullptr);

/// Attention over the H*W tokens of each frame independently.
template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& features, const AttentionParams<T>& params,
                            AttentionMaps<T>* maps = nullptr);

/// Full attention over all H*W*T tokens. Throws ResourceError above `token_guard`.
template <typename T>
Tensor<T> joint_st_attention(const Tensor<T>& features, const AttentionParams<T>& params,
                             AttentionMaps<T>* maps = nullptr,
                             std::size_t token_guard = kJointTokenGuard);

/// Direct 3-D cross-correlation with zero "same" padding.
/// kernel is [k_t x k_h x k_w x d_in x d_out] with odd spatial/temporal extents.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& features, const Tensor<T>& kernel);

}  // namespace tracktention
