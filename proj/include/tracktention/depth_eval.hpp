#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "tracktention/tensor.hpp"

namespace tracktention {

enum class AlignMode { per_frame, per_video };

AlignMode parse_align_mode(std::string_view name);
std::string_view to_string(AlignMode mode);

using DepthMask = std::vector<std::uint8_t>;

/// Valid entries: the explicit mask if given, otherwise gt > 0.
DepthMask default_depth_mask(const Tensor<double>& gt);

/// Least-squares fit gt ~ s * pred + t. Frames are the leading axis.
struct Alignment {
  AlignMode mode = AlignMode::per_video;
  std::vector<double> scale;  ///< one entry per frame, or a single entry per video
  std::vector<double> shift;
  double residual = 0;        ///< sum of squared errors over the mask
  Tensor<double> aligned;     ///< s * pred + t everywhere
};

/// Throws DegenerateFitError when a fit has fewer than 2 valid entries or
/// constant prediction.
Alignment align_scale_shift(const Tensor<double>& pred, const Tensor<double>& gt,
                            const std::optional<DepthMask>& mask, AlignMode mode);

/// mean |d^ - d| / d over the mask. EvalError on an empty mask or gt <= 0.
double absrel(const Tensor<double>& aligned, const Tensor<double>& gt,
              const std::optional<DepthMask>& mask = std::nullopt);

/// Fraction of masked entries with max(d/d^, d^/d) < tau (strict). d^ <= 0 fails.
double delta_acc(const Tensor<double>& aligned, const Tensor<double>& gt, double tau,
                 const std::optional<DepthMask>& mask = std::nullopt);

struct DepthEvalResult {
  AlignMode mode = AlignMode::per_video;
  std::vector<double> scale;
  std::vector<double> shift;
  double residual = 0;
  double absrel = 0;
  double delta_acc = 0;
};

DepthEvalResult evaluate_depth(const Tensor<double>& pred, const Tensor<double>& gt, AlignMode mode,
                               double tau = 1.25, const std::optional<DepthMask>& mask = std::nullopt);

}  // namespace tracktention
