#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "test_util.hpp"
#include "tracktention/error.hpp"
#include "tracktention/layer.hpp"
#include "tracktention/param_bundle.hpp"

using namespace tracktention;
using tt_test::bitwise_equal;
using tt_test::max_abs_diff;

namespace {

template <typename T>
TrackSet<T> random_tracks(Rng& rng, std::size_t frames, std::size_t count, std::size_t h, std::size_t w) {
  TrackSet<T> t = TrackSet<T>::zeros(frames, count);
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t m = 0; m < count; ++m) {
      t.points(f, m, 0) = static_cast<T>(rng.uniform() * static_cast<double>(w + 2) - 1.5);
      t.points(f, m, 1) = static_cast<T>(rng.uniform() * static_cast<double>(h + 2) - 1.5);
    }
  return t;
}

LayerConfig small_config() {
  LayerConfig c;
  c.d_f = 16;
  c.d_k = 16;
  c.heads = 2;
  c.tt_heads = 2;
  c.max_frames = 16;
  return c;
}

}  // namespace

TEST_CASE("zero-initialised output projection makes the layer an identity") {
  Rng rng(1);
  for (int trial = 0; trial < 3; ++trial) {
    const auto layer = init_layer<float>(rng.next_u64(), small_config());
    const auto f = rng_normal<float>(rng, {4, 5, 6, 16});
    const auto tracks = random_tracks<float>(rng, 4, 7, 5, 6);
    CHECK(bitwise_equal(tracktention_forward(f, tracks, layer), f));
  }
}

TEST_CASE("initialisation is seeded") {
  const auto a = init_layer<float>(11, small_config());
  const auto b = init_layer<float>(11, small_config());
  const auto c = init_layer<float>(12, small_config());
  CHECK(bitwise_equal(a.att.w_q, b.att.w_q));
  CHECK(bitwise_equal(a.tt.layers[1].w_2, b.tt.layers[1].w_2));
  CHECK_FALSE(bitwise_equal(a.att.w_q, c.att.w_q));
  for (float w : a.att.w_out.data()) CHECK(w == 0.0f);
  for (float g : a.att.q_norm_gain.data()) CHECK(g == 1.0f);
}

TEST_CASE("information flows along tracks across frames") {
  Rng rng(2);
  auto layer = init_layer<double>(3, small_config());
  layer.att.w_out = rng_normal<double>(rng, {16, 16}, 0.5);
  layer.att.sigma = 0.7;
  auto f = rng_normal<double>(rng, {3, 6, 6, 16});
  TrackSet<double> tracks = TrackSet<double>::zeros(3, 1);
  for (std::size_t t = 0; t < 3; ++t) {
    tracks.points(t, 0, 0) = 1.0 + 1.5 * static_cast<double>(t);
    tracks.points(t, 0, 1) = 2.0;
  }
  const auto base = tracktention_forward(f, tracks, layer);
  for (std::size_t c = 0; c < 16; ++c) f(0, 2, 1, c) += 1.0;
  const auto moved = tracktention_forward(f, tracks, layer);
  double change = 0;
  for (std::size_t c = 0; c < 16; ++c) change += std::abs(moved(2, 2, 4, c) - base(2, 2, 4, c));
  CHECK(change > 1e-6);
}

TEST_CASE("reversing time reverses the sampled tokens") {
  Rng rng(4);
  auto layer = init_layer<double>(5, small_config());
  layer.att.w_q = rng_normal<double>(rng, {16, 16}, 0.3);
  const auto f = rng_normal<double>(rng, {4, 5, 5, 16});
  const auto tracks = random_tracks<double>(rng, 4, 6, 5, 5);
  Tensor<double> rf(f.shape());
  TrackSet<double> rt = tracks;
  for (std::size_t t = 0; t < 4; ++t) {
    const auto src = f.slice(3 - t);
    std::copy(src.begin(), src.end(), rf.slice(t).begin());
    for (std::size_t m = 0; m < 6; ++m)
      for (std::size_t k = 0; k < 2; ++k) rt.points(t, m, k) = tracks.points(3 - t, m, k);
  }
  LayerTrace<double> a, b;
  tracktention_forward(f, tracks, layer, &a);
  tracktention_forward(rf, rt, layer, &b);
  double diff = 0;
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t m = 0; m < 6; ++m)
      for (std::size_t c = 0; c < 16; ++c)
        diff = std::max(diff, std::abs(a.sampling.tokens(t, m, c) - b.sampling.tokens(3 - t, m, c)));
  CHECK(diff < 1e-12);
}

TEST_CASE("frame-count mismatch names both counts") {
  const auto layer = init_layer<float>(1, small_config());
  const Tensor<float> f({4, 3, 3, 16});
  const auto tracks = TrackSet<float>::zeros(5, 2);
  try {
    tracktention_forward(f, tracks, layer);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("T=4") != std::string::npos);
    CHECK(msg.find("T=5") != std::string::npos);
  }
  CHECK_THROWS_AS(tracktention_forward(Tensor<float>({4, 3, 3, 8}), TrackSet<float>::zeros(4, 2), layer),
                  Error);
}

TEST_CASE("zero-init insertion after every block is invisible at several grid sizes") {
  LayerConfig lc = small_config();
  lc.num_blocks = 2;
  auto plain = ToyBackboneConfig::from_layer_config(lc);
  auto inserted = plain;
  inserted.insert_after = {0, 1};
  const auto plain_params = init_backbone<float>(4, plain);
  const auto params = init_backbone<float>(4, inserted);
  Rng rng(10);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 5}, {8, 8}}) {
    const auto f = rng_normal<float>(rng, {2, h, w, 16});
    const auto tracks = random_tracks<float>(rng, 2, 3, h, w);
    CHECK(bitwise_equal(toy_backbone_forward(f, tracks, inserted, params),
                        toy_backbone_forward(f, tracks, plain, plain_params)));
  }
}

TEST_CASE("parameter counts") {
  LayerConfig c;
  c.d_f = c.d_k = 8;
  c.heads = 1;
  c.tt_heads = 1;
  c.tt_layers = 2;
  c.max_frames = 8;
  const auto count = param_count(init_layer<float>(0, c));
  CHECK(count.total == 1872);
  std::size_t sum = 0;
  for (const auto& [name, n] : count.parts) sum += n;
  CHECK(sum == count.total);

  std::size_t prev = 0;
  for (std::size_t d : {8u, 16u, 32u}) {
    c.d_f = c.d_k = d;
    const std::size_t n = param_count(init_layer<float>(0, c)).total;
    CHECK(n > prev);
    prev = n;
  }
}

TEST_CASE("backbone insertion and sharing") {
  LayerConfig lc = small_config();
  lc.num_blocks = 3;
  Rng rng(6);
  const auto f = rng_normal<float>(rng, {3, 4, 4, 16});
  const auto tracks = random_tracks<float>(rng, 3, 5, 4, 4);

  auto plain = ToyBackboneConfig::from_layer_config(lc);
  const auto plain_params = init_backbone<float>(9, plain);
  CHECK(plain_params.tracktention.empty());
  const auto y0 = toy_backbone_forward(f, tracks, plain, plain_params);

  auto inserted = plain;
  inserted.insert_after = {2, 0, 1};
  const auto params = init_backbone<float>(9, inserted);
  CHECK(params.tracktention.size() == 3);
  CHECK(bitwise_equal(toy_backbone_forward(f, tracks, inserted, params), y0));

  auto shared = inserted;
  shared.share_tracktention = true;
  const auto shared_params = init_backbone<float>(9, shared);
  CHECK(shared_params.tracktention.size() == 1);
  const std::size_t per_layer = param_count(shared_params.tracktention[0]).total;
  CHECK(param_count(params).total - param_count(shared_params).total == 2 * per_layer);
  CHECK(param_count(shared_params).total - param_count(plain_params).total == per_layer);

  auto bad = plain;
  bad.insert_after = {3};
  CHECK_THROWS_AS(init_backbone<float>(0, bad), ConfigError);
  bad.insert_after = {1, 1};
  CHECK_THROWS_AS(init_backbone<float>(0, bad), ConfigError);
}

TEST_CASE("config JSON") {
  const auto c = LayerConfig::from_json_text(R"({"d_f": 32, "sigma": 1.5, "insert_after": [0]})");
  CHECK(c.d_f == 32);
  CHECK(c.sigma == 1.5);
  CHECK(c.insert_after == std::vector<std::size_t>{0});
  CHECK(c.heads == LayerConfig{}.heads);
  const auto back = LayerConfig::from_json_text(c.to_json_text());
  CHECK(back.to_json_text() == c.to_json_text());
  CHECK_THROWS_AS(LayerConfig::from_json_text(R"({"sigmaa": 1})"), ConfigError);
  CHECK_THROWS_AS(LayerConfig::from_json_text(R"({"d_f": "wide"})"), ConfigError);
  CHECK_THROWS_AS(LayerConfig::from_json_text("[1, 2]"), ConfigError);
  CHECK_THROWS_AS(LayerConfig::from_json_text(R"({"d_f": )"), ParseError);
}

TEST_CASE("parameter bundles round-trip") {
  tt_test::ScratchDir dir("bundle");
  Rng rng(7);
  auto layer = init_layer<float>(3, small_config());
  layer.att.w_out = rng_normal<float>(rng, {16, 16}, 0.1);
  layer.att.sigma = 0.8;
  layer.att.rope_on_values = false;
  save_layer_bundle(dir.path(), layer);
  const auto loaded = load_layer_bundle(dir.path());
  CHECK(loaded.att.sigma == 0.8);
  CHECK_FALSE(loaded.att.rope_on_values);
  CHECK(bitwise_equal(loaded.att.w_out, layer.att.w_out));
  CHECK(bitwise_equal(loaded.tt.layers[1].ln2_bias, layer.tt.layers[1].ln2_bias));
  const auto f = rng_normal<float>(rng, {3, 4, 5, 16});
  const auto tracks = random_tracks<float>(rng, 3, 4, 4, 5);
  CHECK(bitwise_equal(tracktention_forward(f, tracks, loaded), tracktention_forward(f, tracks, layer)));

  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  auto manifest = nlohmann::json::parse(in);
  in.close();
  manifest["tensors"][0]["shape"] = {3, 3};
  std::ofstream(manifest_path) << manifest.dump();
  CHECK_THROWS_AS(load_layer_bundle(dir.path()), ParseError);
  CHECK_THROWS_AS(load_layer_bundle(dir / "missing"), Error);
}
