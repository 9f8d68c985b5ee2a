#include "tracktention/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <tuple>

#include "tracktention/baselines.hpp"
#include "tracktention/error.hpp"
#include "tracktention/layer.hpp"
#include "tracktention/ops.hpp"
#include "tracktention/rng.hpp"

namespace tracktention {

BenchAxis parse_bench_axis(std::string_view name) {
  if (name == "hw" || name == "HW") return BenchAxis::hw;
  if (name == "t" || name == "T") return BenchAxis::t;
  if (name == "m" || name == "M") return BenchAxis::m;
  if (name == "n") return BenchAxis::n;
  throw ConfigError("unknown sweep axis '" + std::string(name) + "' (expected hw, t, m or n)");
}

std::string_view to_string(BenchAxis axis) {
  switch (axis) {
    case BenchAxis::hw: return "hw";
    case BenchAxis::t: return "t";
    case BenchAxis::m: return "m";
    case BenchAxis::n: return "n";
  }
  return "?";
}

const std::vector<std::string>& bench_operators() {
  static const std::vector<std::string> ops = {"tracktention",  "sampling",      "track_transformer",
                                               "joint_st_attn", "temporal_attn", "spatial_attn",
                                               "conv3d",        "matmul"};
  return ops;
}

std::pair<std::size_t, std::size_t> grid_for_cells(std::size_t cells) {
  if (cells == 0) throw ConfigError("grid needs at least one cell");
  std::size_t h = 1;
  for (std::size_t d = 1; d * d <= cells; ++d)
    if (cells % d == 0) h = d;
  return {h, cells / h};
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("slope fit needs equally many x and y values");
  if (x.size() < 2) throw ConfigError("slope fit needs at least 2 points");
  std::vector<double> lx(x.size()), ly(y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw NumericError("slope fit needs positive values");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (sxx == 0) throw NumericError("slope fit needs at least 2 distinct sizes");
  return sxy / sxx;
}

double estimate_flops(std::string_view op, std::size_t frames, std::size_t height, std::size_t width,
                      std::size_t tracks, std::size_t d_f, std::size_t tt_layers) {
  const double t = static_cast<double>(frames), hw = static_cast<double>(height * width);
  const double m = static_cast<double>(tracks), d = static_cast<double>(d_f);
  const double l = static_cast<double>(tt_layers);
  const double tt = m * l * (t * 12 * d * d * 2 + 2 * t * t * d * 2);
  const double sampling = t * (hw * (2 * d * d + 4 * m * d) + 4 * m * d * d);
  if (op == "sampling") return sampling;
  if (op == "track_transformer") return tt;
  if (op == "tracktention") return t * (hw * (8 * d * d + 8 * m * d) + 6 * m * d * d) + tt;
  if (op == "joint_st_attn") {
    const double n = t * hw;
    return n * 8 * d * d + 4 * n * n * d;
  }
  if (op == "temporal_attn") return hw * (t * 8 * d * d + 4 * t * t * d);
  if (op == "spatial_attn") return t * (hw * 8 * d * d + 4 * hw * hw * d);
  if (op == "conv3d") return t * hw * 27 * d * d * 2;
  if (op == "matmul") return 2 * d * d * d;  // square n x n product with n = d_f
  throw ConfigError("no FLOP model for operator '" + std::string(op) + "'");
}

namespace {

bool axis_allowed(const std::string& op, BenchAxis axis) {
  if (op == "matmul") return axis == BenchAxis::n;
  if (axis == BenchAxis::n) return false;
  if (op == "tracktention" || op == "sampling") return true;
  if (op == "track_transformer") return axis != BenchAxis::hw;
  return axis != BenchAxis::m;  // baselines have no tracks
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Builds the inputs of one row and returns a closure running the forward pass.
std::function<void()> make_workload(const BenchRow& row, std::uint64_t seed, std::size_t heads,
                                    std::size_t tt_layers) {
  Rng rng(seed);
  if (row.op == "matmul") {
    const std::size_t n = row.size;
    auto a = std::make_shared<Tensor<float>>(rng_normal<float>(rng, {n, n}));
    auto b = std::make_shared<Tensor<float>>(rng_normal<float>(rng, {n, n}));
    return [a, b] { volatile float sink = matmul(*a, *b)[0]; (void)sink; };
  }
  const std::size_t d = row.d_f;
  const auto make_features = [&] {
    return std::make_shared<Tensor<float>>(rng_normal<float>(rng, {row.frames, row.height, row.width, d}));
  };

  if (row.op == "tracktention" || row.op == "sampling" || row.op == "track_transformer") {
    LayerConfig cfg;
    cfg.d_f = d;
    cfg.d_k = d;
    cfg.heads = heads;
    cfg.tt_layers = tt_layers;
    cfg.tt_heads = heads;
    cfg.max_frames = row.frames;
    auto layer = std::make_shared<TracktentionLayer<float>>(init_layer<float>(seed, cfg));
    if (row.op == "track_transformer") {
      auto tokens = std::make_shared<Tensor<float>>(rng_normal<float>(rng, {row.frames, row.tracks, d}));
      return [tokens, layer] { track_transformer_forward(*tokens, layer->tt); };
    }
    auto features = make_features();
    auto tracks = std::make_shared<TrackSet<float>>(TrackSet<float>::zeros(row.frames, row.tracks));
    for (std::size_t t = 0; t < row.frames; ++t) {
      for (std::size_t i = 0; i < row.tracks; ++i) {
        tracks->points(t, i, 0) = static_cast<float>(rng.uniform() * static_cast<double>(row.width - 1));
        tracks->points(t, i, 1) = static_cast<float>(rng.uniform() * static_cast<double>(row.height - 1));
      }
    }
    if (row.op == "sampling") {
      return [features, tracks, layer] {
        const Tensor<float> tokens = embed_track_points(*tracks, layer->att);
        attentional_sampling(*features, tokens, *tracks, layer->att);
      };
    }
    return [features, tracks, layer] { tracktention_forward(*features, *tracks, *layer); };
  }

  auto features = make_features();
  if (row.op == "conv3d") {
    auto kernel = std::make_shared<Tensor<float>>(rng_normal<float>(rng, {3, 3, 3, d, d}, 0.02));
    return [features, kernel] { conv3d(*features, *kernel); };
  }
  auto params = std::make_shared<AttentionParams<float>>(init_attention_params<float>(rng, d, d, heads));
  if (row.op == "joint_st_attn") return [features, params] { joint_st_attention(*features, *params); };
  if (row.op == "temporal_attn") return [features, params] { temporal_attention(*features, *params); };
  if (row.op == "spatial_attn") return [features, params] { spatial_attention(*features, *params); };
  throw ConfigError("unknown bench operator '" + row.op + "'");
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

}  // namespace

BenchResult bench_scaling(const BenchSpec& spec) {
  const auto& ops = bench_operators();
  if (std::find(ops.begin(), ops.end(), spec.op) == ops.end()) {
    throw ConfigError("unknown bench operator '" + spec.op + "'");
  }
  if (!axis_allowed(spec.op, spec.axis)) {
    throw ConfigError("operator '" + spec.op + "' cannot be swept over axis '" +
                      std::string(to_string(spec.axis)) + "'");
  }
  if (spec.sizes.size() < 4) throw ConfigError("a sweep needs at least 4 sizes");
  for (std::size_t i = 0; i < spec.sizes.size(); ++i) {
    if (spec.sizes[i] == 0) throw ConfigError("sweep sizes must be positive");
    if (i > 0 && spec.sizes[i] <= spec.sizes[i - 1]) throw ConfigError("sweep sizes must be strictly ascending");
  }
  if (spec.repeats < 5 && spec.timing) throw ConfigError("timing needs at least 5 repeats");

  BenchResult result;
  result.timed = spec.timing;
  for (const std::size_t size : spec.sizes) {
    BenchRow row;
    row.op = spec.op;
    row.axis = spec.axis;
    row.size = size;
    row.frames = spec.frames;
    row.height = spec.height;
    row.width = spec.width;
    row.tracks = spec.tracks;
    row.d_f = spec.d_f;
    switch (spec.axis) {
      case BenchAxis::hw: std::tie(row.height, row.width) = grid_for_cells(size); break;
      case BenchAxis::t: row.frames = size; break;
      case BenchAxis::m: row.tracks = size; break;
      case BenchAxis::n:
        row.frames = row.height = row.width = row.tracks = 0;
        row.d_f = size;
        break;
    }
    row.flops_est =
        estimate_flops(spec.op, row.frames, row.height, row.width, row.tracks, row.d_f, spec.tt_layers);
    row.median_s = std::numeric_limits<double>::quiet_NaN();
    if (spec.op == "joint_st_attn" && row.frames * row.height * row.width > kJointTokenGuard) {
      row.skipped = true;
    } else if (spec.timing) {
      const auto run = make_workload(row, spec.seed, spec.heads, spec.tt_layers);
      run();  // warm-up
      std::vector<double> times;
      for (std::size_t r = 0; r < spec.repeats; ++r) {
        const auto start = std::chrono::steady_clock::now();
        run();
        const auto stop = std::chrono::steady_clock::now();
        times.push_back(std::max(std::chrono::duration<double>(stop - start).count(), 1e-9));
      }
      row.median_s = median(std::move(times));
    }
    result.rows.push_back(row);
  }

  std::vector<double> xs, ys;
  for (const BenchRow& r : result.rows) {
    if (r.skipped) continue;
    xs.push_back(static_cast<double>(r.size));
    ys.push_back(spec.timing ? r.median_s : r.flops_est);
  }
  result.slope = xs.size() >= 2 ? loglog_slope(xs, ys) : std::numeric_limits<double>::quiet_NaN();
  return result;
}

std::string bench_csv(const BenchResult& result) {
  std::ostringstream os;
  os << "op,axis,size,T,H,W,M,d_f,median_s,flops_est\n";
  for (const BenchRow& r : result.rows) {
    os << r.op << ',' << to_string(r.axis) << ',' << r.size << ',' << r.frames << ',' << r.height << ','
       << r.width << ',' << r.tracks << ',' << r.d_f << ',';
    if (r.skipped) {
      os << "skipped";
    } else if (!result.timed) {
      os << "NA";
    } else {
      os << format_number(r.median_s);
    }
    os << ',' << format_number(r.flops_est) << '\n';
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", result.slope);
  os << "# slope=" << buf << '\n';
  return os.str();
}

}  // namespace tracktention
