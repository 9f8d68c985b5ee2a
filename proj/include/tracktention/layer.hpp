#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tracktention/baselines.hpp"
#include "tracktention/track_transformer.hpp"
#include "tracktention/trackatt.hpp"

namespace tracktention {

/// Dimensions and hyperparameters of a Tracktention layer and of the toy
/// backbone it is inserted into. Mirrors the JSON config file.
struct LayerConfig {
  std::size_t d_f = 64;
  std::size_t d_k = 64;
  std::size_t heads = 4;
  double sigma = 0.5;
  double rope_base = 100.0;
  bool rope_on_values = true;
  bool mask_invisible = false;
  std::size_t tt_layers = 2;
  std::size_t tt_heads = 4;
  std::size_t max_frames = 256;
  std::size_t num_blocks = 2;
  std::vector<std::size_t> insert_after;
  bool share_tracktention = false;
  std::uint64_t seed = 0;

  /// Unknown keys are rejected so typos surface as ConfigError.
  static LayerConfig from_json_text(std::string_view text);
  std::string to_json_text() const;
};

template <typename T>
struct TracktentionLayer {
  TracktentionParams<T> att;
  TrackTransformerParams<T> tt;

  void validate() const;
};

inline constexpr double kInitStd = 0.02;

/// W_out = 0, every other weight ~ N(0, 0.02^2), norm gains 1.
template <typename T>
TracktentionLayer<T> init_layer(std::uint64_t seed, const LayerConfig& config);

/// Intermediate values of one forward pass.
template <typename T>
struct LayerTrace {
  SamplingResult<T> sampling;
  Tensor<T> updated_tokens;
  SplattingResult<T> splatting;
};

/// F' = F + splat(track_transformer(sample(F, embed(P), P))).
template <typename T>
Tensor<T> tracktention_forward(const Tensor<T>& features, const TrackSet<T>& tracks,
                               const TracktentionLayer<T>& layer, LayerTrace<T>* trace = nullptr);

/// Per-frame pre-norm transformer block of the toy image backbone.
template <typename T>
struct BackboneBlockParams {
  AttentionParams<T> attn;
  Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Tensor<T> w_1;  ///< [d x 4d]
  Tensor<T> w_2;  ///< [4d x d]
};

struct ToyBackboneConfig {
  std::size_t num_blocks = 2;
  std::vector<std::size_t> insert_after;
  bool share_tracktention = false;
  LayerConfig layer;

  static ToyBackboneConfig from_layer_config(const LayerConfig& config);
  void validate() const;
};

template <typename T>
struct ToyBackboneParams {
  std::vector<BackboneBlockParams<T>> blocks;
  /// One entry when shared, otherwise one per insertion point (in sorted order).
  std::vector<TracktentionLayer<T>> tracktention;
};

template <typename T>
ToyBackboneParams<T> init_backbone(std::uint64_t seed, const ToyBackboneConfig& config);

/// Runs the per-frame blocks and applies Tracktention after each block listed
/// in insert_after.
template <typename T>
Tensor<T> toy_backbone_forward(const Tensor<T>& features, const TrackSet<T>& tracks,
                               const ToyBackboneConfig& config, const ToyBackboneParams<T>& params);

struct ParamCount {
  std::vector<std::pair<std::string, std::size_t>> parts;
  std::size_t total = 0;

  void add(std::string name, std::size_t n) {
    parts.emplace_back(std::move(name), n);
    total += n;
  }
};

/// Learnable scalars; the fixed time-PE table is not counted.
template <typename T>
ParamCount param_count(const TracktentionLayer<T>& layer);

template <typename T>
ParamCount param_count(const ToyBackboneParams<T>& backbone);

}  // namespace tracktention
