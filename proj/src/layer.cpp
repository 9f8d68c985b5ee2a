#include "tracktention/layer.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "tracktention/ops.hpp"
#include "tracktention/parallel.hpp"

namespace tracktention {

using nlohmann::json;

namespace {

const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      "d_f",       "d_k",        "heads",      "sigma",        "rope_base",
      "rope_on_values", "mask_invisible", "tt_layers", "tt_heads", "max_frames",
      "num_blocks", "insert_after", "share_tracktention", "seed"};
  return keys;
}

template <typename V>
V config_value(const json& j, const char* key, V fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace

LayerConfig LayerConfig::from_json_text(std::string_view text) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known_config_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  LayerConfig c;
  c.d_f = config_value(j, "d_f", c.d_f);
  c.d_k = config_value(j, "d_k", c.d_k);
  c.heads = config_value(j, "heads", c.heads);
  c.sigma = config_value(j, "sigma", c.sigma);
  c.rope_base = config_value(j, "rope_base", c.rope_base);
  c.rope_on_values = config_value(j, "rope_on_values", c.rope_on_values);
  c.mask_invisible = config_value(j, "mask_invisible", c.mask_invisible);
  c.tt_layers = config_value(j, "tt_layers", c.tt_layers);
  c.tt_heads = config_value(j, "tt_heads", c.tt_heads);
  c.max_frames = config_value(j, "max_frames", c.max_frames);
  c.num_blocks = config_value(j, "num_blocks", c.num_blocks);
  c.insert_after = config_value(j, "insert_after", c.insert_after);
  c.share_tracktention = config_value(j, "share_tracktention", c.share_tracktention);
  c.seed = config_value(j, "seed", c.seed);
  return c;
}

std::string LayerConfig::to_json_text() const {
  json j = {{"d_f", d_f},
            {"d_k", d_k},
            {"heads", heads},
            {"sigma", sigma},
            {"rope_base", rope_base},
            {"rope_on_values", rope_on_values},
            {"mask_invisible", mask_invisible},
            {"tt_layers", tt_layers},
            {"tt_heads", tt_heads},
            {"max_frames", max_frames},
            {"num_blocks", num_blocks},
            {"insert_after", insert_after},
            {"share_tracktention", share_tracktention},
            {"seed", seed}};
  return j.dump(2);
}

template <typename T>
void TracktentionLayer<T>::validate() const {
  att.validate();
  tt.validate();
  if (att.d_f != tt.d_f) throw ConfigError("sampling and track transformer widths differ");
}

template <typename T>
TracktentionLayer<T> init_layer(std::uint64_t seed, const LayerConfig& c) {
  const Rng root(seed);
  Rng rng = root.stream(0);
  TracktentionLayer<T> layer;
  auto& a = layer.att;
  a.d_f = c.d_f;
  a.d_k = c.d_k;
  a.heads = c.heads;
  a.sigma = c.sigma;
  a.rope_base = c.rope_base;
  a.rope_on_values = c.rope_on_values;
  a.mask_invisible = c.mask_invisible;
  a.w_q = rng_normal<T>(rng, {c.d_f, c.d_k}, kInitStd);
  a.w_k = rng_normal<T>(rng, {c.d_f, c.d_k}, kInitStd);
  a.embed_proj = rng_normal<T>(rng, {c.d_f, c.d_f}, kInitStd);
  a.w_out = Tensor<T>({c.d_f, c.d_f});
  a.q_norm_gain = Tensor<T>({c.d_k}, T{1});
  a.k_norm_gain = Tensor<T>({c.d_k}, T{1});
  Rng tt_rng = root.stream(1);
  layer.tt = init_track_transformer<T>(tt_rng, c.d_f, c.tt_heads, c.tt_layers, c.max_frames, kInitStd);
  layer.validate();
  return layer;
}

template <typename T>
Tensor<T> tracktention_forward(const Tensor<T>& features, const TrackSet<T>& tracks,
                               const TracktentionLayer<T>& layer, LayerTrace<T>* trace) {
  layer.validate();
  if (features.rank() != 4) {
    throw DimensionError("feature map must be [T x H x W x D], got " + shape_string(features.shape()));
  }
  if (features.dim(0) != tracks.frames()) {
    throw DimensionError("feature map has T=" + std::to_string(features.dim(0)) +
                         " but tracks have T=" + std::to_string(tracks.frames()));
  }
  const Grid grid = Grid::of(features);
  const Tensor<T> tokens = embed_track_points(tracks, layer.att);
  auto sampled = attentional_sampling(features, tokens, tracks, grid, layer.att);
  Tensor<T> updated = track_transformer_forward(sampled.tokens, layer.tt);
  auto splat = attentional_splatting(updated, tracks, grid, layer.att);

  Tensor<T> out = features;
  auto o = out.data();
  const auto d = splat.delta.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += d[i];

  if (trace) {
    trace->sampling = std::move(sampled);
    trace->updated_tokens = std::move(updated);
    trace->splatting = std::move(splat);
  }
  return out;
}

ToyBackboneConfig ToyBackboneConfig::from_layer_config(const LayerConfig& config) {
  ToyBackboneConfig c;
  c.num_blocks = config.num_blocks;
  c.insert_after = config.insert_after;
  c.share_tracktention = config.share_tracktention;
  c.layer = config;
  return c;
}

void ToyBackboneConfig::validate() const {
  if (num_blocks == 0) throw ConfigError("backbone needs at least one block");
  std::set<std::size_t> seen;
  for (std::size_t i : insert_after) {
    if (i >= num_blocks) {
      throw ConfigError("insert_after index " + std::to_string(i) + " outside 0.." +
                        std::to_string(num_blocks - 1));
    }
    if (!seen.insert(i).second) throw ConfigError("insert_after lists block " + std::to_string(i) + " twice");
  }
}

template <typename T>
ToyBackboneParams<T> init_backbone(std::uint64_t seed, const ToyBackboneConfig& config) {
  config.validate();
  const auto& c = config.layer;
  const Rng root(seed);
  ToyBackboneParams<T> p;
  for (std::size_t b = 0; b < config.num_blocks; ++b) {
    Rng rng = root.stream(100 + b);
    BackboneBlockParams<T> blk;
    blk.attn = init_attention_params<T>(rng, c.d_f, c.d_k, c.heads, kInitStd);
    blk.ln1_gain = Tensor<T>({c.d_f}, T{1});
    blk.ln1_bias = Tensor<T>({c.d_f});
    blk.ln2_gain = Tensor<T>({c.d_f}, T{1});
    blk.ln2_bias = Tensor<T>({c.d_f});
    blk.w_1 = rng_normal<T>(rng, {c.d_f, 4 * c.d_f}, kInitStd);
    blk.w_2 = rng_normal<T>(rng, {4 * c.d_f, c.d_f}, kInitStd);
    p.blocks.push_back(std::move(blk));
  }
  const std::size_t n_layers =
      config.share_tracktention ? (config.insert_after.empty() ? 0 : 1) : config.insert_after.size();
  for (std::size_t i = 0; i < n_layers; ++i) {
    p.tracktention.push_back(init_layer<T>(root.stream(200 + i).next_u64(), c));
  }
  return p;
}

namespace {

template <typename T>
Tensor<T> backbone_block(const Tensor<T>& x, const BackboneBlockParams<T>& blk) {
  const std::size_t d = x.dim(3);
  const T eps = static_cast<T>(1e-5);
  Tensor<T> h = layer_norm(x, blk.ln1_gain, blk.ln1_bias, eps);
  const Tensor<T> attn = spatial_attention(h, blk.attn);
  Tensor<T> y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += attn[i];
  h = layer_norm(y, blk.ln2_gain, blk.ln2_bias, eps);
  const Tensor<T> ff = linear(gelu(linear(h.reshaped({h.size() / d, d}), blk.w_1)), blk.w_2);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += ff[i];
  return y;
}

}  // namespace

template <typename T>
Tensor<T> toy_backbone_forward(const Tensor<T>& features, const TrackSet<T>& tracks,
                               const ToyBackboneConfig& config, const ToyBackboneParams<T>& params) {
  config.validate();
  if (params.blocks.size() != config.num_blocks) throw ConfigError("backbone parameter/block count mismatch");
  std::vector<std::size_t> order = config.insert_after;
  std::sort(order.begin(), order.end());
  const std::size_t needed = config.share_tracktention ? (order.empty() ? 0 : 1) : order.size();
  if (params.tracktention.size() != needed) throw ConfigError("backbone Tracktention parameter count mismatch");

  Tensor<T> x = features;
  for (std::size_t b = 0; b < config.num_blocks; ++b) {
    x = backbone_block(x, params.blocks[b]);
    const auto it = std::find(order.begin(), order.end(), b);
    if (it != order.end()) {
      const std::size_t slot = config.share_tracktention ? 0 : static_cast<std::size_t>(it - order.begin());
      x = tracktention_forward(x, tracks, params.tracktention[slot]);
    }
  }
  return x;
}

template <typename T>
ParamCount param_count(const TracktentionLayer<T>& layer) {
  ParamCount c;
  const auto& a = layer.att;
  c.add("att.w_q", a.w_q.size());
  c.add("att.w_k", a.w_k.size());
  c.add("att.w_out", a.w_out.size());
  c.add("att.q_norm_gain", a.q_norm_gain.size());
  c.add("att.k_norm_gain", a.k_norm_gain.size());
  c.add("att.embed_proj", a.embed_proj.size());
  for (std::size_t i = 0; i < layer.tt.layers.size(); ++i) {
    const auto& l = layer.tt.layers[i];
    const std::string p = "tt.layer" + std::to_string(i) + ".";
    c.add(p + "attention", l.w_q.size() + l.w_k.size() + l.w_v.size() + l.w_o.size());
    c.add(p + "ffn", l.w_1.size() + l.w_2.size());
    c.add(p + "layer_norm", l.ln1_gain.size() + l.ln1_bias.size() + l.ln2_gain.size() + l.ln2_bias.size());
  }
  return c;
}

template <typename T>
ParamCount param_count(const ToyBackboneParams<T>& backbone) {
  ParamCount c;
  for (std::size_t b = 0; b < backbone.blocks.size(); ++b) {
    const auto& blk = backbone.blocks[b];
    c.add("block" + std::to_string(b),
          blk.attn.w_q.size() + blk.attn.w_k.size() + blk.attn.w_v.size() + blk.attn.w_o.size() +
              blk.ln1_gain.size() + blk.ln1_bias.size() + blk.ln2_gain.size() + blk.ln2_bias.size() +
              blk.w_1.size() + blk.w_2.size());
  }
  for (std::size_t i = 0; i < backbone.tracktention.size(); ++i) {
    c.add("tracktention" + std::to_string(i), param_count(backbone.tracktention[i]).total);
  }
  return c;
}

#define TT_INSTANTIATE(T)                                                                        \
  template struct TracktentionLayer<T>;                                                          \
  template TracktentionLayer<T> init_layer<T>(std::uint64_t, const LayerConfig&);                \
  template Tensor<T> tracktention_forward(const Tensor<T>&, const TrackSet<T>&,                  \
                                          const TracktentionLayer<T>&, LayerTrace<T>*);          \
  template ToyBackboneParams<T> init_backbone<T>(std::uint64_t, const ToyBackboneConfig&);       \
  template Tensor<T> toy_backbone_forward(const Tensor<T>&, const TrackSet<T>&,                  \
                                          const ToyBackboneConfig&, const ToyBackboneParams<T>&); \
  template ParamCount param_count(const TracktentionLayer<T>&);                                  \
  template ParamCount param_count(const ToyBackboneParams<T>&);

TT_INSTANTIATE(float)
TT_INSTANTIATE(double)
#undef TT_INSTANTIATE

}  // namespace tracktention
