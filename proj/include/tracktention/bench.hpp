#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tracktention {

enum class BenchAxis { hw, t, m, n };

BenchAxis parse_bench_axis(std::string_view name);
std::string_view to_string(BenchAxis axis);

/// Operators the bench knows how to time:
/// tracktention, sampling, track_transformer, joint_st_attn, temporal_attn,
/// spatial_attn, conv3d, matmul.
const std::vector<std::string>& bench_operators();

struct BenchSpec {
  std::string op = "tracktention";
  BenchAxis axis = BenchAxis::hw;
  std::vector<std::size_t> sizes;
  std::uint64_t seed = 0;
  std::size_t repeats = 5;
  bool timing = true;
  // Fixed dimensions; the swept one is overridden per row.
  std::size_t frames = 8;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t tracks = 64;
  std::size_t d_f = 32;
  std::size_t heads = 4;
  std::size_t tt_layers = 2;
};

struct BenchRow {
  std::string op;
  BenchAxis axis = BenchAxis::hw;
  std::size_t size = 0;
  std::size_t frames = 0, height = 0, width = 0, tracks = 0, d_f = 0;
  double median_s = 0;   ///< NaN when timing is off
  double flops_est = 0;
  bool skipped = false;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  double slope = 0;  ///< log-log fit over non-skipped rows; time if timed, else flops
  bool timed = true;
};

/// Grid for a swept cell count: H is the largest divisor of `cells` not above sqrt(cells).
std::pair<std::size_t, std::size_t> grid_for_cells(std::size_t cells);

/// Least-squares slope of log(y) against log(x). Needs >= 2 points, all positive.
double loglog_slope(std::span<const double> x, std::span<const double> y);

/// Rough multiply-add count (x2) of one forward pass of `op`.
double estimate_flops(std::string_view op, std::size_t frames, std::size_t height, std::size_t width,
                      std::size_t tracks, std::size_t d_f, std::size_t tt_layers);

/// Throws ConfigError for fewer than 4 sizes, unsorted sizes or an unknown op/axis pair.
BenchResult bench_scaling(const BenchSpec& spec);

/// Header `op,axis,size,T,H,W,M,d_f,median_s,flops_est`, one line per row and
/// a `# slope=<float>` footer. Untimed rows print NA; skipped rows print `skipped`.
std::string bench_csv(const BenchResult& result);

}  // namespace tracktention
