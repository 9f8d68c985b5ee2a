#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"
#include "tracktention/error.hpp"
#include "tracktention/parallel.hpp"
#include "tracktention/track_transformer.hpp"

using namespace tracktention;
using tt_test::bitwise_equal;
using tt_test::max_abs_diff;

namespace {

void ref_layer_norm(std::vector<double>& v, const Tensor<double>& g, const Tensor<double>& b, double eps) {
  double mean = 0, var = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  for (std::size_t c = 0; c < v.size(); ++c) v[c] = (v[c] - mean) / std::sqrt(var + eps) * g[c] + b[c];
}

std::vector<double> ref_vecmat(const std::vector<double>& v, const Tensor<double>& w) {
  std::vector<double> out(w.dim(1), 0.0);
  for (std::size_t i = 0; i < w.dim(0); ++i)
    for (std::size_t j = 0; j < w.dim(1); ++j) out[j] += v[i] * w(i, j);
  return out;
}

// Straightforward per-track reference of the pre-norm encoder.
Tensor<double> reference_forward(const Tensor<double>& tokens, const TrackTransformerParams<double>& p) {
  const std::size_t frames = tokens.dim(0), m = tokens.dim(1), d = p.d_f, dh = d / p.heads;
  Tensor<double> out(tokens.shape());
  for (std::size_t track = 0; track < m; ++track) {
    std::vector<std::vector<double>> x(frames, std::vector<double>(d));
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t c = 0; c < d; ++c) x[t][c] = tokens(t, track, c) + p.time_pe(t, c);
    for (const auto& l : p.layers) {
      std::vector<std::vector<double>> q(frames), k(frames), v(frames);
      for (std::size_t t = 0; t < frames; ++t) {
        auto h = x[t];
        ref_layer_norm(h, l.ln1_gain, l.ln1_bias, p.ln_eps);
        q[t] = ref_vecmat(h, l.w_q);
        k[t] = ref_vecmat(h, l.w_k);
        v[t] = ref_vecmat(h, l.w_v);
      }
      for (std::size_t t = 0; t < frames; ++t) {
        std::vector<double> ctx(d, 0.0);
        for (std::size_t hd = 0; hd < p.heads; ++hd) {
          std::vector<double> w(frames);
          double top = -1e300, z = 0;
          for (std::size_t s = 0; s < frames; ++s) {
            double dot = 0;
            for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) dot += q[t][c] * k[s][c];
            w[s] = dot / std::sqrt(static_cast<double>(dh));
            top = std::max(top, w[s]);
          }
          for (double& e : w) z += (e = std::exp(e - top));
          for (std::size_t s = 0; s < frames; ++s)
            for (std::size_t c = hd * dh; c < (hd + 1) * dh; ++c) ctx[c] += w[s] / z * v[s][c];
        }
        const auto o = ref_vecmat(ctx, l.w_o);
        for (std::size_t c = 0; c < d; ++c) x[t][c] += o[c];
      }
      for (std::size_t t = 0; t < frames; ++t) {
        auto h = x[t];
        ref_layer_norm(h, l.ln2_gain, l.ln2_bias, p.ln_eps);
        auto hidden = ref_vecmat(h, l.w_1);
        for (double& z : hidden) z = 0.5 * z * (1 + std::erf(z / std::sqrt(2.0)));
        const auto f = ref_vecmat(hidden, l.w_2);
        for (std::size_t c = 0; c < d; ++c) x[t][c] += f[c];
      }
    }
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t c = 0; c < d; ++c) out(t, track, c) = x[t][c];
  }
  return out;
}

TrackTransformerParams<double> random_tt(Rng& rng, std::size_t d, std::size_t layers, std::size_t max_frames) {
  auto p = init_track_transformer<double>(rng, d, 4, layers, max_frames, 0.3);
  for (auto& l : p.layers) {
    l.ln1_bias = rng_normal<double>(rng, {d}, 0.1);
    l.ln2_gain = rng_normal<double>(rng, {d}, 0.2);
    for (double& g : l.ln2_gain.data()) g += 1.0;
  }
  return p;
}

}  // namespace

TEST_CASE("time positional encoding") {
  const auto pe = time_pos_encoding<double>(10000, 8);
  for (std::size_t c = 0; c < 8; ++c) CHECK(pe(0, c) == (c % 2 == 0 ? 0.0 : 1.0));
  for (double v : pe.data()) CHECK_FALSE((v < -1.0 || v > 1.0));
  CHECK(pe(3, 2) == doctest::Approx(std::sin(3.0 / std::pow(10000.0, 2.0 / 8))));
  CHECK(pe(3, 3) == doctest::Approx(std::cos(3.0 / std::pow(10000.0, 2.0 / 8))));

  std::vector<std::vector<double>> rows;
  for (std::size_t t = 0; t < 10000; ++t) rows.emplace_back(pe.slice(t).begin(), pe.slice(t).end());
  std::sort(rows.begin(), rows.end());
  CHECK(std::adjacent_find(rows.begin(), rows.end()) == rows.end());

  CHECK_THROWS_AS(time_pos_encoding<double>(4, 7), ConfigError);
}

TEST_CASE("forward matches an independent reference") {
  Rng rng(1);
  for (std::size_t layers : {1u, 2u, 3u}) {
    const auto p = random_tt(rng, 8, layers, 16);
    const auto x = rng_normal<double>(rng, {5, 3, 8});
    CHECK(max_abs_diff(track_transformer_forward(x, p), reference_forward(x, p)) < 1e-10);
  }
}

TEST_CASE("a single time step is a self-loop") {
  Rng rng(2);
  const auto p = random_tt(rng, 8, 2, 4);
  TrackTransformerTrace<double> trace;
  const auto x = rng_normal<double>(rng, {1, 3, 8});
  const auto y = track_transformer_forward(x, p, &trace);
  for (double a : trace.attention.data()) CHECK(a == 1.0);
  CHECK(max_abs_diff(y, reference_forward(x, p)) < 1e-10);
}

TEST_CASE("tracks do not exchange information") {
  Rng rng(3);
  const auto p = random_tt(rng, 8, 2, 8).cast<float>();
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = rng_normal<float>(rng, {6, 5, 8});
    const auto base = track_transformer_forward(x, p);
    auto y = x;
    const std::size_t victim = rng.below(5);
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t c = 0; c < 8; ++c) y(t, victim, c) += static_cast<float>(rng.normal());
    const auto moved = track_transformer_forward(y, p);
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t m = 0; m < 5; ++m) {
        if (m == victim) continue;
        for (std::size_t c = 0; c < 8; ++c) CHECK(std::memcmp(&base(t, m, c), &moved(t, m, c), sizeof(float)) == 0);
      }
  }
}

TEST_CASE("temporal attention rows are stochastic") {
  Rng rng(4);
  const auto p = random_tt(rng, 8, 2, 8);
  TrackTransformerTrace<double> trace;
  track_transformer_forward(rng_normal<double>(rng, {7, 3, 8}, 3.0), p, &trace);
  CHECK(trace.attention.shape() == Shape{3, 2, 4, 7, 7});
  for (std::size_t r = 0; r < trace.attention.size() / 7; ++r) {
    double sum = 0;
    for (std::size_t s = 0; s < 7; ++s) {
      CHECK(trace.attention[r * 7 + s] >= 0);
      sum += trace.attention[r * 7 + s];
    }
    CHECK(std::abs(sum - 1) < 1e-5);
  }
}

TEST_CASE("time positional encoding breaks permutation equivariance") {
  Rng rng(5);
  const auto p = random_tt(rng, 8, 2, 8);
  const auto x = rng_normal<double>(rng, {4, 1, 8});
  auto swapped = x;
  for (std::size_t c = 0; c < 8; ++c) std::swap(swapped(0, 0, c), swapped(2, 0, c));
  const auto a = track_transformer_forward(x, p), b = track_transformer_forward(swapped, p);
  double diff = 0;
  for (std::size_t c = 0; c < 8; ++c) diff += std::abs(a(0, 0, c) - b(2, 0, c));
  CHECK(diff > 1e-6);
}

TEST_CASE("zero output projections give input plus PE exactly") {
  Rng rng(6);
  auto p = random_tt(rng, 8, 2, 8);
  for (auto& l : p.layers) {
    l.w_o = Tensor<double>({8, 8});
    l.w_2 = Tensor<double>({32, 8});
  }
  const auto x = rng_normal<double>(rng, {5, 2, 8});
  const auto y = track_transformer_forward(x, p);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t m = 0; m < 2; ++m)
      for (std::size_t c = 0; c < 8; ++c) CHECK(y(t, m, c) == x(t, m, c) + p.time_pe(t, c));
}

TEST_CASE("averaging transformer shrinks toward the temporal mean") {
  const double eps = 0.02;
  const auto p = make_averaging_track_transformer<double>(8, 4, 16, eps);
  Rng rng(7);
  auto x = rng_normal<double>(rng, {10, 3, 8});
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t m = 0; m < 3; ++m) {
      double mean = 0;
      for (std::size_t c = 0; c < 8; ++c) mean += x(t, m, c);
      for (std::size_t c = 0; c < 8; ++c) x(t, m, c) -= mean / 8;
    }
  const auto y = track_transformer_forward(x, p);
  for (std::size_t m = 0; m < 3; ++m)
    for (std::size_t c = 0; c < 8; ++c) {
      double mean = 0;
      for (std::size_t t = 0; t < 10; ++t) mean += x(t, m, c);
      mean /= 10;
      for (std::size_t t = 0; t < 10; ++t) CHECK(std::abs(y(t, m, c) - (mean + eps * (x(t, m, c) - mean))) < 1e-6);
    }
  CHECK_THROWS_AS(make_averaging_track_transformer<double>(8, 4, 16, 1.5), ConfigError);
}

TEST_CASE("configuration errors") {
  Rng rng(8);
  auto p = random_tt(rng, 8, 2, 4);
  CHECK_THROWS_AS(track_transformer_forward(Tensor<double>({5, 1, 8}), p), ConfigError);
  CHECK_THROWS_AS(track_transformer_forward(Tensor<double>({3, 1, 6}), p), DimensionError);
  CHECK_THROWS_AS(init_track_transformer<double>(rng, 8, 4, 0, 4), ConfigError);
  CHECK_THROWS_AS(init_track_transformer<double>(rng, 8, 4, 4, 4), ConfigError);
  CHECK_THROWS_AS(init_track_transformer<double>(rng, 8, 3, 2, 4), ConfigError);
  auto broken = p;
  broken.layers[1].w_1 = Tensor<double>({8, 8});
  CHECK_THROWS_AS(broken.validate(), ConfigError);
}

TEST_CASE("results do not depend on the thread count") {
  Rng rng(9);
  const auto p = random_tt(rng, 8, 2, 8).cast<float>();
  const auto x = rng_normal<float>(rng, {6, 9, 8});
  set_num_threads(1);
  const auto a = track_transformer_forward(x, p);
  set_num_threads(3);
  const auto b = track_transformer_forward(x, p);
  set_num_threads(1);
  CHECK(bitwise_equal(a, b));
}
