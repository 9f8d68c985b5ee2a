#include "tracktention/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tracktention/baselines.hpp"
#include "tracktention/bench.hpp"
#include "tracktention/demos.hpp"
#include "tracktention/depth_eval.hpp"
#include "tracktention/layer.hpp"
#include "tracktention/parallel.hpp"
#include "tracktention/param_bundle.hpp"
#include "tracktention/ten1.hpp"
#include "tracktention/tracks.hpp"

namespace tracktention {

namespace {

using nlohmann::json;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> sizes;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw CLI::ValidationError("--sizes", "not an integer: '" + item + "'");
    sizes.push_back(static_cast<std::size_t>(v));
  }
  return sizes;
}

struct GenTracksArgs {
  std::string strategy = "random_volume";
  std::size_t count = 576, frames = 0, height = 0, width = 0;
  std::uint64_t seed = 0;
  std::string motion, out;
};

int cmd_gen_tracks(const GenTracksArgs& a, std::ostream& out) {
  const QuerySpec spec{parse_query_strategy(a.strategy), a.count, a.seed};
  const MotionField field = a.motion.empty()
                                ? MotionField::identity(a.frames, a.height, a.width)
                                : MotionField::from_json_text(read_text(a.motion), a.frames, a.height, a.width);
  const auto queries = sample_queries(a.frames, a.height, a.width, spec);
  const TrackSet<float> tracks = synth_tracks<float>(field, queries);
  write_tracks(a.out, tracks);
  out << "wrote " << tracks.count() << " tracks over " << tracks.frames() << " frames to " << a.out << '\n';
  return kExitOk;
}

struct RunArgs {
  std::string features, tracks, config, out, params, save_params, baseline;
  bool backbone = false;
  std::size_t threads = 1;
};

int cmd_run(const RunArgs& a, std::ostream& out) {
  set_num_threads(a.threads);
  const Tensor<float> features = read_ten1<float>(a.features);
  if (features.rank() != 4) {
    throw DimensionError("features must be [T x H x W x D], got " + shape_string(features.shape()));
  }
  LayerConfig config;
  if (!a.config.empty()) {
    config = LayerConfig::from_json_text(read_text(a.config));
  } else {
    config.d_f = config.d_k = features.dim(3);
  }

  Tensor<float> result;
  if (!a.baseline.empty()) {
    const BaselineKind kind = parse_baseline_kind(a.baseline);
    Rng rng(config.seed);
    const std::size_t d = features.dim(3);
    if (kind == BaselineKind::conv3d) {
      result = conv3d(features, rng_normal<float>(rng, {3, 3, 3, d, d}, kInitStd));
    } else {
      const auto p = init_attention_params<float>(rng, d, config.d_k, config.heads, kInitStd);
      if (kind == BaselineKind::temporal_attn) result = temporal_attention(features, p);
      if (kind == BaselineKind::spatial_attn) result = spatial_attention(features, p);
      if (kind == BaselineKind::joint_st_attn) result = joint_st_attention(features, p);
    }
  } else {
    if (a.tracks.empty()) throw ConfigError("--tracks is required unless --baseline is given");
    const TrackSet<float> tracks = read_tracks(a.tracks);
    if (tracks.frames() != features.dim(0)) {
      throw DimensionError("features have T=" + std::to_string(features.dim(0)) + " but tracks have T=" +
                           std::to_string(tracks.frames()));
    }
    if (a.backbone) {
      const ToyBackboneConfig bc = ToyBackboneConfig::from_layer_config(config);
      const auto params = init_backbone<float>(config.seed, bc);
      result = toy_backbone_forward(features, tracks, bc, params);
    } else {
      const TracktentionLayer<float> layer =
          a.params.empty() ? init_layer<float>(config.seed, config) : load_layer_bundle(a.params);
      if (!a.save_params.empty()) save_layer_bundle(a.save_params, layer);
      result = tracktention_forward(features, tracks, layer);
    }
  }
  write_ten1(a.out, result);
  out << "wrote " << shape_string(result.shape()) << " to " << a.out << '\n';
  return kExitOk;
}

struct BenchArgs {
  std::string sweep = "hw", op = "tracktention", sizes, out;
  std::uint64_t seed = 0;
  std::size_t threads = 1, repeats = 5;
  bool no_timing = false;
  BenchSpec dims;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  set_num_threads(a.threads);
  BenchSpec spec = a.dims;
  spec.op = a.op;
  spec.axis = parse_bench_axis(a.sweep);
  spec.sizes = parse_sizes(a.sizes);
  spec.seed = a.seed;
  spec.repeats = a.repeats;
  spec.timing = !a.no_timing;
  const BenchResult r = bench_scaling(spec);
  const std::string csv = bench_csv(r);
  if (a.out.empty()) {
    out << csv;
  } else {
    write_text(a.out, csv);
    out << "slope=" << r.slope << " (" << r.rows.size() << " rows written to " << a.out << ")\n";
  }
  return kExitOk;
}

struct EvalDepthArgs {
  std::string pred, gt, mask, mode = "per_video";
  double tau = 1.25;
};

int cmd_eval_depth(const EvalDepthArgs& a, std::ostream& out) {
  const Tensor<double> pred = read_ten1<double>(a.pred);
  const Tensor<double> gt = read_ten1<double>(a.gt);
  std::optional<DepthMask> mask;
  if (!a.mask.empty()) {
    const Tensor<double> m = read_ten1<double>(a.mask);
    if (m.shape() != gt.shape()) throw DimensionError("mask shape does not match gt");
    mask.emplace(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) (*mask)[i] = m[i] != 0 ? 1 : 0;
  }
  const DepthEvalResult r = evaluate_depth(pred, gt, parse_align_mode(a.mode), a.tau, mask);
  const json j = {{"mode", std::string(to_string(r.mode))}, {"scale", r.scale},
                  {"shift", r.shift},                       {"residual", r.residual},
                  {"absrel", r.absrel},                     {"delta_acc", r.delta_acc},
                  {"tau", a.tau}};
  out << j.dump(2) << '\n';
  return kExitOk;
}

int cmd_denoise(const DenoiseSpec& spec, std::ostream& out) {
  const DenoiseReport r = denoise_demo(spec);
  const json j = {{"input_var", r.input_var}, {"output_var", r.output_var}, {"reduction_factor", r.reduction_factor},
                  {"frames", spec.frames},    {"seed", spec.seed}};
  out << j.dump(2) << '\n';
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, double tol, std::ostream& out) {
  const GradCheckResult r = random_bias_grad_check(seed);
  out << "analytic=" << r.analytic << " finite_diff=" << r.finite_diff << " rel_err=" << r.rel_err << '\n';
  out << (r.passed(tol) ? "PASS" : "FAIL") << '\n';
  return r.passed(tol) ? kExitOk : kExitData;
}

struct CoverageArgs {
  std::string tracks;
  std::size_t frame = 0, height = 0, width = 0;
  double radius = 2.0;
  bool scenario = false;
  std::uint64_t seed = CoverageScenario{}.seed;
};

int cmd_coverage(const CoverageArgs& a, std::ostream& out) {
  if (a.scenario) {
    CoverageScenario s;
    s.radius = a.radius;
    s.seed = a.seed;
    const CoverageComparison c = coverage_scenario(s);
    out << "grid_t0=" << c.grid_t0 << " random_volume=" << c.random_volume << " (frame " << s.frames - 1 << ")\n";
    return kExitOk;
  }
  if (a.tracks.empty() || a.height == 0 || a.width == 0) {
    throw ConfigError("coverage needs --tracks, --height and --width, or --scenario");
  }
  const TrackSet<float> tracks = read_tracks(a.tracks);
  if (a.frame >= tracks.frames()) throw ConfigError("--frame is outside the track set");
  out << coverage(tracks, a.frame, a.radius, a.height, a.width) << '\n';
  return kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Track-guided attention layer, synthetic tracks, baselines and benchmarks", "tracktention"};
  app.require_subcommand(1);

  GenTracksArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-tracks", "Sample tracker queries and write ground-truth tracks");
  gen_cmd->add_option("--strategy", gen.strategy, "constant, grid_t0, random_t0 or random_volume")
      ->capture_default_str();
  gen_cmd->add_option("--count", gen.count, "Number of queries")->capture_default_str();
  gen_cmd->add_option("--frames", gen.frames, "Frame count T")->required();
  gen_cmd->add_option("--height", gen.height, "Grid height H")->required();
  gen_cmd->add_option("--width", gen.width, "Grid width W")->required();
  gen_cmd->add_option("--seed", gen.seed, "RNG seed")->capture_default_str();
  gen_cmd->add_option("--motion", gen.motion, "Motion description (JSON); identity when omitted");
  gen_cmd->add_option("--out", gen.out, "Output tracks file")->required();

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Apply a Tracktention layer (or a baseline) to a feature map");
  run_cmd->add_option("--features", run.features, "Input features, TEN1 [T x H x W x D]")->required();
  run_cmd->add_option("--tracks", run.tracks, "Tracks file");
  run_cmd->add_option("--config", run.config, "Layer config (JSON)");
  run_cmd->add_option("--out", run.out, "Output features, TEN1")->required();
  run_cmd->add_option("--params", run.params, "Load layer parameters from a bundle directory");
  run_cmd->add_option("--save-params", run.save_params, "Write the layer parameters to a bundle directory");
  run_cmd->add_option("--baseline", run.baseline, "Run temporal, spatial, joint or conv3d instead");
  run_cmd->add_flag("--backbone", run.backbone, "Run the toy backbone with Tracktention insertions");
  run_cmd->add_option("--threads", run.threads, "Worker threads")->capture_default_str();

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time an operator over a size sweep and fit the log-log slope");
  bench_cmd->add_option("--sweep", bench.sweep, "Swept axis: hw, t, m or n (matmul)")->capture_default_str();
  bench_cmd->add_option("--op", bench.op,
                        "tracktention, sampling, track_transformer, joint_st_attn, temporal_attn, "
                        "spatial_attn, conv3d or matmul")
      ->capture_default_str();
  bench_cmd->add_option("--sizes", bench.sizes, "Comma-separated ascending sizes (at least 4)")->required();
  bench_cmd->add_option("--out", bench.out, "CSV output path; stdout when omitted");
  bench_cmd->add_option("--seed", bench.seed, "RNG seed")->capture_default_str();
  bench_cmd->add_option("--threads", bench.threads, "Worker threads")->capture_default_str();
  bench_cmd->add_option("--repeats", bench.repeats, "Timed runs per size (median is reported)")->capture_default_str();
  bench_cmd->add_flag("--no-timing", bench.no_timing, "Skip timing; write NA and fit the FLOP estimate");
  bench_cmd->add_option("--frames", bench.dims.frames, "Fixed T")->capture_default_str();
  bench_cmd->add_option("--height", bench.dims.height, "Fixed H")->capture_default_str();
  bench_cmd->add_option("--width", bench.dims.width, "Fixed W")->capture_default_str();
  bench_cmd->add_option("--tracks", bench.dims.tracks, "Fixed M")->capture_default_str();
  bench_cmd->add_option("--dim", bench.dims.d_f, "Feature width d_f")->capture_default_str();
  bench_cmd->add_option("--tt-layers", bench.dims.tt_layers, "Track transformer layers")->capture_default_str();

  EvalDepthArgs eval;
  auto* eval_cmd = app.add_subcommand("eval-depth", "Scale/shift-align a depth prediction and score it");
  eval_cmd->add_option("--pred", eval.pred, "Predicted depth, TEN1 [T x H x W]")->required();
  eval_cmd->add_option("--gt", eval.gt, "Ground-truth depth, TEN1 [T x H x W]")->required();
  eval_cmd->add_option("--mask", eval.mask, "Validity mask, TEN1 (nonzero = valid); default gt > 0");
  eval_cmd->add_option("--mode", eval.mode, "per_frame or per_video")->capture_default_str();
  eval_cmd->add_option("--tau", eval.tau, "Delta threshold")->capture_default_str();

  DenoiseSpec denoise;
  auto* denoise_cmd = app.add_subcommand("denoise-demo", "Measure the track transformer's noise reduction");
  denoise_cmd->add_option("--seed", denoise.seed, "RNG seed")->capture_default_str();
  denoise_cmd->add_option("--frames", denoise.frames, "Frame count T (>= 4)")->capture_default_str();
  denoise_cmd->add_option("--height", denoise.height, "Grid height")->capture_default_str();
  denoise_cmd->add_option("--width", denoise.width, "Grid width")->capture_default_str();
  denoise_cmd->add_option("--tracks", denoise.tracks, "Track count M")->capture_default_str();
  denoise_cmd->add_option("--dim", denoise.d_f, "Feature width")->capture_default_str();
  denoise_cmd->add_option("--noise", denoise.noise_std, "Noise standard deviation")->capture_default_str();

  std::uint64_t grad_seed = 7;
  double grad_tol = 1e-3;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare the analytic bias gradient with finite differences");
  grad_cmd->add_option("--seed", grad_seed, "RNG seed")->capture_default_str();
  grad_cmd->add_option("--tol", grad_tol, "Relative error tolerance")->capture_default_str();

  CoverageArgs cov;
  auto* cov_cmd = app.add_subcommand("coverage", "Fraction of grid cells near a visible track point");
  cov_cmd->add_option("--tracks", cov.tracks, "Tracks file");
  cov_cmd->add_option("--frame", cov.frame, "Frame index")->capture_default_str();
  cov_cmd->add_option("--height", cov.height, "Grid height");
  cov_cmd->add_option("--width", cov.width, "Grid width");
  cov_cmd->add_option("--radius", cov.radius, "Coverage radius in cells")->capture_default_str();
  cov_cmd->add_flag("--scenario", cov.scenario, "Compare grid_t0 and random_volume on the translating scene");
  cov_cmd->add_option("--seed", cov.seed, "Scenario seed")->capture_default_str();

  std::vector<std::string> storage;
  storage.reserve(args.size() + 1);
  storage.push_back("tracktention");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& s : storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_tracks(gen, out);
    if (run_cmd->parsed()) return cmd_run(run, out);
    if (bench_cmd->parsed()) return cmd_bench(bench, out);
    if (eval_cmd->parsed()) return cmd_eval_depth(eval, out);
    if (denoise_cmd->parsed()) return cmd_denoise(denoise, out);
    if (grad_cmd->parsed()) return cmd_gradcheck(grad_seed, grad_tol, out);
    if (cov_cmd->parsed()) return cmd_coverage(cov, out);
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace tracktention
