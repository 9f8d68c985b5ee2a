#include "tracktention/depth_eval.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tracktention {

AlignMode parse_align_mode(std::string_view name) {
  if (name == "per_frame" || name == "frame") return AlignMode::per_frame;
  if (name == "per_video" || name == "video") return AlignMode::per_video;
  throw ConfigError("unknown alignment mode '" + std::string(name) + "'");
}

std::string_view to_string(AlignMode mode) {
  return mode == AlignMode::per_frame ? "per_frame" : "per_video";
}

DepthMask default_depth_mask(const Tensor<double>& gt) {
  DepthMask mask(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) mask[i] = gt[i] > 0 ? 1 : 0;
  return mask;
}

namespace {

DepthMask resolve_mask(const Tensor<double>& gt, const std::optional<DepthMask>& mask) {
  if (!mask) return default_depth_mask(gt);
  if (mask->size() != gt.size()) {
    throw DimensionError("mask has " + std::to_string(mask->size()) + " entries, depth has " +
                         std::to_string(gt.size()));
  }
  return *mask;
}

void check_pair(const Tensor<double>& pred, const Tensor<double>& gt) {
  if (pred.shape() != gt.shape()) {
    throw DimensionError("prediction shape " + shape_string(pred.shape()) + " does not match gt " +
                         shape_string(gt.shape()));
  }
}

struct Fit {
  double s, t;
};

// Closed form on centered sums; two passes keep the affine case exact.
Fit fit_range(const Tensor<double>& pred, const Tensor<double>& gt, const DepthMask& mask,
              std::size_t begin, std::size_t end) {
  std::size_t n = 0;
  double sp = 0, sg = 0;
  for (std::size_t i = begin; i < end; ++i) {
    if (!mask[i]) continue;
    ++n;
    sp += pred[i];
    sg += gt[i];
  }
  if (n < 2) throw DegenerateFitError("scale/shift fit needs at least 2 valid entries, got " + std::to_string(n));
  const double mp = sp / static_cast<double>(n), mg = sg / static_cast<double>(n);
  double sxx = 0, sxy = 0, spp = 0;
  for (std::size_t i = begin; i < end; ++i) {
    if (!mask[i]) continue;
    const double dp = pred[i] - mp;
    sxx += dp * dp;
    sxy += dp * (gt[i] - mg);
    spp += pred[i] * pred[i];
  }
  if (!(sxx > 1e-24 * spp) || sxx == 0) throw DegenerateFitError("prediction has zero variance over the mask");
  const double s = sxy / sxx;
  return {s, mg - s * mp};
}

}  // namespace

Alignment align_scale_shift(const Tensor<double>& pred, const Tensor<double>& gt,
                            const std::optional<DepthMask>& mask, AlignMode mode) {
  check_pair(pred, gt);
  const DepthMask m = resolve_mask(gt, mask);
  const std::size_t frames = pred.rank() >= 2 ? pred.dim(0) : 1;
  const std::size_t per = pred.size() / frames;

  Alignment out;
  out.mode = mode;
  out.aligned = Tensor<double>(pred.shape());
  auto apply = [&](Fit f, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      out.aligned[i] = f.s * pred[i] + f.t;
      if (m[i]) {
        const double r = gt[i] - out.aligned[i];
        out.residual += r * r;
      }
    }
  };
  if (mode == AlignMode::per_video) {
    const Fit f = fit_range(pred, gt, m, 0, pred.size());
    out.scale = {f.s};
    out.shift = {f.t};
    apply(f, 0, pred.size());
  } else {
    for (std::size_t t = 0; t < frames; ++t) {
      const Fit f = fit_range(pred, gt, m, t * per, (t + 1) * per);
      out.scale.push_back(f.s);
      out.shift.push_back(f.t);
      apply(f, t * per, (t + 1) * per);
    }
  }
  return out;
}

double absrel(const Tensor<double>& aligned, const Tensor<double>& gt, const std::optional<DepthMask>& mask) {
  check_pair(aligned, gt);
  const DepthMask m = resolve_mask(gt, mask);
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!m[i]) continue;
    if (!(gt[i] > 0)) throw EvalError("gt must be positive on the mask");
    sum += std::abs(aligned[i] - gt[i]) / gt[i];
    ++n;
  }
  if (n == 0) throw EvalError("empty evaluation mask");
  return sum / static_cast<double>(n);
}

double delta_acc(const Tensor<double>& aligned, const Tensor<double>& gt, double tau,
                 const std::optional<DepthMask>& mask) {
  check_pair(aligned, gt);
  const DepthMask m = resolve_mask(gt, mask);
  std::size_t hits = 0, n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!m[i]) continue;
    if (!(gt[i] > 0)) throw EvalError("gt must be positive on the mask");
    ++n;
    const double d = gt[i], p = aligned[i];
    if (p > 0 && std::max(d / p, p / d) < tau) ++hits;
  }
  if (n == 0) throw EvalError("empty evaluation mask");
  return static_cast<double>(hits) / static_cast<double>(n);
}

DepthEvalResult evaluate_depth(const Tensor<double>& pred, const Tensor<double>& gt, AlignMode mode,
                               double tau, const std::optional<DepthMask>& mask) {
  const Alignment a = align_scale_shift(pred, gt, mask, mode);
  DepthEvalResult r;
  r.mode = mode;
  r.scale = a.scale;
  r.shift = a.shift;
  r.residual = a.residual;
  r.absrel = absrel(a.aligned, gt, mask);
  r.delta_acc = delta_acc(a.aligned, gt, tau, mask);
  return r;
}

}  // namespace tracktention
