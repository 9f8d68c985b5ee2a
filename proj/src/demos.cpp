#include "tracktention/demos.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tracktention/error.hpp"
#include "tracktention/rng.hpp"
#include "tracktention/track_transformer.hpp"
#include "tracktention/trackatt.hpp"
#include "tracktention/tracks.hpp"

namespace tracktention {

namespace {

double mean_sq_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double sum = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

}  // namespace

DenoiseReport denoise_demo(const DenoiseSpec& spec) {
  if (spec.frames < 4) throw ConfigError("denoise demo needs at least 4 frames");
  if (spec.width < 10 || spec.height < 8) throw ConfigError("denoise demo needs a grid of at least 8x10");
  if (spec.d_f < 4 || spec.d_f % 4 != 0) throw ConfigError("denoise demo needs d_f divisible by 4");
  if (spec.tracks == 0) throw ConfigError("denoise demo needs at least one track");
  if (!(spec.noise_std >= 0)) throw ConfigError("noise level must be non-negative");

  const std::size_t frames = spec.frames, height = spec.height, width = spec.width, d = spec.d_f;
  const Rng root(spec.seed);

  // The scene alternates between offsets 0 and 1; a scene point at column u
  // shows up at column u - shift[t].
  std::vector<std::size_t> shift(frames, 0);
  std::vector<AffineMap> steps;
  for (std::size_t t = 0; t + 1 < frames; ++t) {
    shift[t + 1] = 1 - shift[t];
    steps.push_back(AffineMap::translation(shift[t + 1] ? -1.0 : 1.0, 0.0));
  }

  Rng tex_rng = root.stream(0);
  const Tensor<double> texture = rng_normal<double>(tex_rng, {height, width + 1, d});
  Tensor<double> clean({frames, height, width, d});
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        for (std::size_t c = 0; c < d; ++c) clean(t, y, x, c) = texture(y, x + shift[t], c);

  // Zero channel mean keeps the noise visible to the pre-norm layers; the
  // rescale restores the requested per-channel variance.
  Rng noise_rng = root.stream(1);
  Tensor<double> noisy = clean;
  const double rescale = spec.noise_std * std::sqrt(static_cast<double>(d) / static_cast<double>(d - 1));
  std::vector<double> n(d);
  for (std::size_t cell = 0; cell < frames * height * width; ++cell) {
    double mean = 0;
    for (std::size_t c = 0; c < d; ++c) {
      n[c] = noise_rng.normal();
      mean += n[c];
    }
    mean /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) noisy[cell * d + c] += rescale * (n[c] - mean);
  }

  // Integer queries far enough from the border that the Gaussian window
  // never sees the edge.
  Rng query_rng = root.stream(2);
  constexpr std::size_t margin = 4;
  std::vector<Query> queries(spec.tracks);
  for (Query& q : queries) {
    q.x = static_cast<double>(margin + query_rng.below(width - 2 * margin + 1));
    q.y = static_cast<double>(margin - 1 + query_rng.below(height - 2 * (margin - 1)));
  }
  const MotionField field = MotionField::from_steps(frames, height, width, steps);
  const TrackSet<double> tracks = synth_tracks<double>(field, queries);

  TracktentionParams<double> att = TracktentionParams<double>::zeros(d, d, 1);
  att.rope_on_values = false;
  const Tensor<double> tokens = embed_track_points(tracks, att);
  const Tensor<double> s_clean = attentional_sampling(clean, tokens, tracks, att).tokens;
  const Tensor<double> s_noisy = attentional_sampling(noisy, tokens, tracks, att).tokens;

  const auto tt = make_averaging_track_transformer<double>(d, 4, frames);
  const Tensor<double> out = track_transformer_forward(s_noisy, tt);

  DenoiseReport r;
  r.input_var = mean_sq_diff(s_noisy, s_clean);
  r.output_var = mean_sq_diff(out, s_clean);
  r.reduction_factor = r.input_var < 1e-12 ? 1.0 : r.input_var / std::max(r.output_var, 1e-300);
  return r;
}

CoverageComparison coverage_scenario(const CoverageScenario& s) {
  const MotionField field =
      MotionField::uniform(s.frames, s.height, s.width, AffineMap::translation(s.dx, s.dy));
  CoverageComparison out;
  for (const QueryStrategy strategy : {QueryStrategy::grid_t0, QueryStrategy::random_volume}) {
    const std::vector<Query> queries =
        sample_queries(s.frames, s.height, s.width, QuerySpec{strategy, s.count, s.seed});
    const TrackSet<double> tracks = synth_tracks<double>(field, queries);
    const double c = coverage(tracks, s.frames - 1, s.radius, s.height, s.width);
    (strategy == QueryStrategy::grid_t0 ? out.grid_t0 : out.random_volume) = c;
  }
  return out;
}

GradCheckResult random_bias_grad_check(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t frames = 3, height = 6, width = 7, d = 16, heads = 2, count = 5;
  const Tensor<double> features = rng_normal<double>(rng, {frames, height, width, d});
  TrackSet<double> tracks = TrackSet<double>::zeros(frames, count);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < count; ++i) {
      tracks.points(t, i, 0) = rng.uniform() * static_cast<double>(width) - 0.5;
      tracks.points(t, i, 1) = rng.uniform() * static_cast<double>(height) - 0.5;
    }
  }
  TracktentionParams<double> params = TracktentionParams<double>::zeros(d, d, heads);
  params.w_k = rng_normal<double>(rng, {d, d}, 0.5);
  for (std::size_t c = 0; c < d; ++c) params.k_norm_gain[c] = 0.5 + rng.uniform();
  params.sigma = 0.5 + rng.uniform();
  const std::size_t track = rng.below(count), frame = rng.below(frames);
  const double angle = 2 * 3.14159265358979323846 * rng.uniform();
  return bias_grad_check(features, tracks, params, track, frame, {std::cos(angle), std::sin(angle)});
}

}  // namespace tracktention
