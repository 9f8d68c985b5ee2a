#include "tracktention/param_bundle.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "tracktention/ten1.hpp"

namespace tracktention {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "tracktention-params/1";

/// Visits every named tensor of a layer in manifest order.
template <typename Layer, typename Fn>
void for_each_tensor(Layer& layer, Fn&& fn) {
  fn("att.w_q", layer.att.w_q);
  fn("att.w_k", layer.att.w_k);
  fn("att.w_out", layer.att.w_out);
  fn("att.q_norm_gain", layer.att.q_norm_gain);
  fn("att.k_norm_gain", layer.att.k_norm_gain);
  fn("att.embed_proj", layer.att.embed_proj);
  fn("tt.time_pe", layer.tt.time_pe);
  for (std::size_t i = 0; i < layer.tt.layers.size(); ++i) {
    auto& l = layer.tt.layers[i];
    const std::string p = "tt.layer" + std::to_string(i) + ".";
    fn(p + "w_q", l.w_q);
    fn(p + "w_k", l.w_k);
    fn(p + "w_v", l.w_v);
    fn(p + "w_o", l.w_o);
    fn(p + "w_1", l.w_1);
    fn(p + "w_2", l.w_2);
    fn(p + "ln1_gain", l.ln1_gain);
    fn(p + "ln1_bias", l.ln1_bias);
    fn(p + "ln2_gain", l.ln2_gain);
    fn(p + "ln2_bias", l.ln2_bias);
  }
}

}  // namespace

void save_layer_bundle(const std::filesystem::path& dir, const TracktentionLayer<float>& layer) {
  layer.validate();
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = kFormat;
  manifest["hyperparameters"] = {{"d_f", layer.att.d_f},
                                 {"d_k", layer.att.d_k},
                                 {"heads", layer.att.heads},
                                 {"sigma", layer.att.sigma},
                                 {"rope_base", layer.att.rope_base},
                                 {"rope_on_values", layer.att.rope_on_values},
                                 {"mask_invisible", layer.att.mask_invisible},
                                 {"tt_heads", layer.tt.heads},
                                 {"tt_layers", layer.tt.layers.size()},
                                 {"tt_ln_eps", layer.tt.ln_eps}};
  json tensors = json::array();
  for_each_tensor(layer, [&](const std::string& name, const Tensor<float>& t) {
    const std::string file = name + ".ten1";
    write_ten1(dir / file, t);
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"file", file}});
  });
  manifest["tensors"] = std::move(tensors);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

TracktentionLayer<float> load_layer_bundle(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ParseError("cannot open " + (dir / "manifest.json").string());
  std::stringstream ss;
  ss << in.rdbuf();
  json manifest;
  try {
    manifest = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("manifest: ") + e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
  try {
    if (manifest.at("format").get<std::string>() != kFormat) throw ParseError("manifest: unsupported format");
    const json& hp = manifest.at("hyperparameters");
    TracktentionLayer<float> layer;
    layer.att.d_f = hp.at("d_f").get<std::size_t>();
    layer.att.d_k = hp.at("d_k").get<std::size_t>();
    layer.att.heads = hp.at("heads").get<std::size_t>();
    layer.att.sigma = hp.at("sigma").get<double>();
    layer.att.rope_base = hp.at("rope_base").get<double>();
    layer.att.rope_on_values = hp.at("rope_on_values").get<bool>();
    layer.att.mask_invisible = hp.value("mask_invisible", false);
    layer.tt.d_f = layer.att.d_f;
    layer.tt.heads = hp.at("tt_heads").get<std::size_t>();
    layer.tt.ln_eps = hp.value("tt_ln_eps", 1e-5);
    layer.tt.layers.resize(hp.at("tt_layers").get<std::size_t>());

    std::map<std::string, std::pair<Shape, std::string>> entries;
    for (const json& e : manifest.at("tensors")) {
      entries[e.at("name").get<std::string>()] = {e.at("shape").get<Shape>(), e.at("file").get<std::string>()};
    }
    for_each_tensor(layer, [&](const std::string& name, Tensor<float>& t) {
      const auto it = entries.find(name);
      if (it == entries.end()) throw ParseError("manifest: missing tensor '" + name + "'");
      t = read_ten1<float>(dir / it->second.second);
      if (t.shape() != it->second.first) {
        throw ParseError("tensor '" + name + "' has shape " + shape_string(t.shape()) +
                         ", manifest says " + shape_string(it->second.first));
      }
    });
    layer.validate();
    return layer;
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
}

}  // namespace tracktention
