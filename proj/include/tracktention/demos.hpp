#pragma once

#include <cstddef>
#include <cstdint>

#include "tracktention/trackatt.hpp"

namespace tracktention {

struct DenoiseSpec {
  std::uint64_t seed = 0;
  std::size_t frames = 16;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t tracks = 64;
  std::size_t d_f = 32;
  double noise_std = 1.0;
};

struct DenoiseReport {
  double input_var = 0;   ///< mean squared error of the sampled noisy track features
  double output_var = 0;  ///< same after the track transformer
  double reduction_factor = 1;
};

/// Camera-shake video (the scene jumps one cell left and back every frame)
/// whose tracked features are constant in time, plus per-frame i.i.d. noise.
/// Samples with W_Q = 0 and unrotated values, then runs the averaging track
/// transformer. Errors are measured against the sampled clean video; a
/// noise-free run reports a reduction factor of 1. Requires frames >= 4.
DenoiseReport denoise_demo(const DenoiseSpec& spec);

/// Translating scene used to compare query strategies at the last frame.
struct CoverageScenario {
  std::size_t frames = 16;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t count = 64;
  double radius = 2.0;
  double dx = 0.6;  ///< scene translation per frame
  double dy = 0.3;
  std::uint64_t seed = 2024;
};

struct CoverageComparison {
  double grid_t0 = 0;
  double random_volume = 0;
};

/// Coverage of frame T-1 for grid_t0 and random_volume queries.
CoverageComparison coverage_scenario(const CoverageScenario& scenario);

/// Bias-gradient check on a seeded random instance (double precision,
/// W_Q = 0, random keys, rotated values).
GradCheckResult random_bias_grad_check(std::uint64_t seed);

}  // namespace tracktention
