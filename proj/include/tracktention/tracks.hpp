#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tracktention/tensor.hpp"

namespace tracktention {

/// M point trajectories over T frames. Coordinates are in feature-grid units:
/// cell centers sit at integer (x, y), origin top-left. Points may lie off the grid.
template <typename T>
struct TrackSet {
  Tensor<T> points;                                ///< [T x M x 2], (x, y)
  std::optional<std::vector<std::uint8_t>> visible;  ///< T*M flags, row-major; absent = all visible

  /// Zero-filled track set. Throws ConfigError when frames or count is zero.
  static TrackSet zeros(std::size_t frames, std::size_t count);

  std::size_t frames() const { return points.dim(0); }
  std::size_t count() const { return points.dim(1); }

  T x(std::size_t t, std::size_t m) const { return points(t, m, 0); }
  T y(std::size_t t, std::size_t m) const { return points(t, m, 1); }
  bool is_visible(std::size_t t, std::size_t m) const {
    return !visible || (*visible)[t * count() + m] != 0;
  }

  /// Points of one frame as an [M x 2] tensor.
  Tensor<T> frame(std::size_t t) const;

  /// Throws ConfigError/NumericError when an invariant is violated.
  void validate() const;

  template <typename U>
  TrackSet<U> cast() const {
    return TrackSet<U>{points.template cast<U>(), visible};
  }
};

enum class QueryStrategy { constant, grid_t0, random_t0, random_volume };

QueryStrategy parse_query_strategy(std::string_view name);
std::string_view to_string(QueryStrategy strategy);

struct QuerySpec {
  QueryStrategy strategy = QueryStrategy::random_volume;
  std::size_t count = 576;
  std::uint64_t seed = 0;
};

/// Tracker seed point. `pinned` queries produce tracks that never move.
struct Query {
  std::size_t t = 0;
  double x = 0;
  double y = 0;
  bool pinned = false;

  bool operator==(const Query&) const = default;
};

std::vector<Query> sample_queries(std::size_t frames, std::size_t height, std::size_t width,
                                  const QuerySpec& spec);

/// p' = A p + b.
struct AffineMap {
  double a11 = 1, a12 = 0, a21 = 0, a22 = 1;
  double bx = 0, by = 0;

  static AffineMap translation(double dx, double dy) { return {1, 0, 0, 1, dx, dy}; }
  /// Rotation by `radians` about (cx, cy).
  static AffineMap rotation(double radians, double cx, double cy);

  double det() const { return a11 * a22 - a12 * a21; }
  void apply(double& x, double& y) const;
  /// Throws GenerationError when |det| <= 1e-6.
  AffineMap inverse() const;
};

/// Disc moving with constant velocity; center(t) = center + velocity * t.
struct Sprite {
  double cx = 0, cy = 0;
  double radius = 1;
  double vx = 0, vy = 0;
};

/// Known motion used to generate ground-truth tracks: either a global affine
/// map per frame step, or translating sprites over a static background.
struct MotionField {
  enum class Kind { affine, sprites };

  Kind kind = Kind::affine;
  std::size_t frames = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::vector<AffineMap> steps;  ///< steps[t] maps frame t to frame t+1 (frames-1 entries)
  std::vector<Sprite> sprites;

  static MotionField identity(std::size_t frames, std::size_t height, std::size_t width);
  static MotionField uniform(std::size_t frames, std::size_t height, std::size_t width,
                             const AffineMap& step);
  static MotionField from_steps(std::size_t frames, std::size_t height, std::size_t width,
                                std::vector<AffineMap> steps);
  static MotionField from_sprites(std::size_t frames, std::size_t height, std::size_t width,
                                  std::vector<Sprite> sprites);

  /// Parses the motion description used by `gen-tracks --motion`.
  static MotionField from_json_text(std::string_view text, std::size_t frames, std::size_t height,
                                    std::size_t width);
};

/// Propagates every query forward through the per-step maps and backward
/// through their exact inverses, stitched into one T-length trajectory.
template <typename T>
TrackSet<T> synth_tracks(const MotionField& field, std::span<const Query> queries);

/// Fraction of grid cells whose center lies within `radius` of at least one
/// visible point of frame t.
template <typename T>
double coverage(const TrackSet<T>& tracks, std::size_t t, double radius, std::size_t height,
                std::size_t width);

/// Same metric over a raw point list of (x, y) pairs; an empty list covers nothing.
double coverage(std::span<const std::pair<double, double>> points, double radius,
                std::size_t height, std::size_t width);

std::string tracks_to_json(const TrackSet<float>& tracks);
TrackSet<float> tracks_from_json(std::string_view text);

void write_tracks(const std::filesystem::path& path, const TrackSet<float>& tracks);
TrackSet<float> read_tracks(const std::filesystem::path& path);

}  // namespace tracktention
