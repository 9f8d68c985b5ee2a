#include "tracktention/tracks.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tracktention/rng.hpp"

namespace tracktention {

using nlohmann::json;

template <typename T>
TrackSet<T> TrackSet<T>::zeros(std::size_t frames, std::size_t count) {
  if (frames == 0) throw ConfigError("track set needs at least one frame");
  if (count == 0) throw ConfigError("track set needs at least one track");
  return TrackSet<T>{Tensor<T>({frames, count, 2}), std::nullopt};
}

template <typename T>
Tensor<T> TrackSet<T>::frame(std::size_t t) const {
  const auto s = points.slice(t);
  return Tensor<T>({count(), 2}, std::vector<T>(s.begin(), s.end()));
}

template <typename T>
void TrackSet<T>::validate() const {
  if (points.empty()) throw ConfigError("track set is empty");
  if (points.rank() != 3 || points.dim(2) != 2) {
    throw ConfigError("track points must be [T x M x 2], got " + shape_string(points.shape()));
  }
  for (T v : points.data()) {
    if (std::isnan(v)) throw NumericError("track coordinates contain NaN");
  }
  if (visible && visible->size() != frames() * count()) {
    throw ConfigError("visibility mask must hold T*M entries");
  }
}

template struct TrackSet<float>;
template struct TrackSet<double>;

QueryStrategy parse_query_strategy(std::string_view name) {
  if (name == "constant") return QueryStrategy::constant;
  if (name == "grid_t0") return QueryStrategy::grid_t0;
  if (name == "random_t0") return QueryStrategy::random_t0;
  if (name == "random_volume") return QueryStrategy::random_volume;
  throw ConfigError("unknown query strategy '" + std::string(name) + "'");
}

std::string_view to_string(QueryStrategy strategy) {
  switch (strategy) {
    case QueryStrategy::constant: return "constant";
    case QueryStrategy::grid_t0: return "grid_t0";
    case QueryStrategy::random_t0: return "random_t0";
    case QueryStrategy::random_volume: return "random_volume";
  }
  return "?";
}

std::vector<Query> sample_queries(std::size_t frames, std::size_t height, std::size_t width,
                                  const QuerySpec& spec) {
  if (frames == 0 || height == 0 || width == 0) throw ConfigError("video extents must be >= 1");
  if (spec.count == 0) throw ConfigError("query count must be >= 1");

  const double span_x = static_cast<double>(width - 1);
  const double span_y = static_cast<double>(height - 1);
  std::vector<Query> out;
  out.reserve(spec.count);

  if (spec.strategy == QueryStrategy::grid_t0) {
    const auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(spec.count))));
    if (n * n != spec.count) {
      throw ConfigError("grid_t0 needs a perfect-square count, got " + std::to_string(spec.count));
    }
    // n x n lattice over [0, W-1] x [0, H-1], inset by half a lattice spacing.
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        out.push_back({0, (static_cast<double>(c) + 0.5) * span_x / static_cast<double>(n),
                       (static_cast<double>(r) + 0.5) * span_y / static_cast<double>(n), false});
      }
    }
    return out;
  }

  const Rng base(spec.seed);
  for (std::size_t i = 0; i < spec.count; ++i) {
    Rng rng = base.stream(i);
    Query q;
    const double ut = rng.uniform();
    q.x = rng.uniform() * span_x;
    q.y = rng.uniform() * span_y;
    if (spec.strategy == QueryStrategy::random_volume) {
      q.t = std::min(frames - 1, static_cast<std::size_t>(ut * static_cast<double>(frames)));
    }
    q.pinned = spec.strategy == QueryStrategy::constant;
    out.push_back(q);
  }
  return out;
}

AffineMap AffineMap::rotation(double radians, double cx, double cy) {
  const double c = std::cos(radians), s = std::sin(radians);
  // p' = R (p - center) + center
  return {c, -s, s, c, cx - (c * cx - s * cy), cy - (s * cx + c * cy)};
}

void AffineMap::apply(double& x, double& y) const {
  const double nx = a11 * x + a12 * y + bx;
  const double ny = a21 * x + a22 * y + by;
  x = nx;
  y = ny;
}

AffineMap AffineMap::inverse() const {
  const double d = det();
  if (!(std::abs(d) > 1e-6)) {
    throw GenerationError("affine motion map is not invertible (det = " + std::to_string(d) + ")");
  }
  const double i11 = a22 / d, i12 = -a12 / d, i21 = -a21 / d, i22 = a11 / d;
  return {i11, i12, i21, i22, -(i11 * bx + i12 * by), -(i21 * bx + i22 * by)};
}

MotionField MotionField::identity(std::size_t frames, std::size_t height, std::size_t width) {
  return uniform(frames, height, width, AffineMap{});
}

MotionField MotionField::uniform(std::size_t frames, std::size_t height, std::size_t width,
                                 const AffineMap& step) {
  return from_steps(frames, height, width, std::vector<AffineMap>(frames ? frames - 1 : 0, step));
}

MotionField MotionField::from_steps(std::size_t frames, std::size_t height, std::size_t width,
                                    std::vector<AffineMap> steps) {
  if (frames == 0) throw ConfigError("motion field needs at least one frame");
  if (steps.size() != frames - 1) {
    throw ConfigError("affine motion needs " + std::to_string(frames - 1) + " steps, got " +
                      std::to_string(steps.size()));
  }
  MotionField f;
  f.kind = Kind::affine;
  f.frames = frames;
  f.height = height;
  f.width = width;
  f.steps = std::move(steps);
  return f;
}

MotionField MotionField::from_sprites(std::size_t frames, std::size_t height, std::size_t width,
                                      std::vector<Sprite> sprites) {
  if (frames == 0) throw ConfigError("motion field needs at least one frame");
  MotionField f;
  f.kind = Kind::sprites;
  f.frames = frames;
  f.height = height;
  f.width = width;
  f.sprites = std::move(sprites);
  return f;
}

namespace {

json parse_json(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
}

double number_at(const json& j, const std::string& where) {
  if (!j.is_number()) throw ParseError(where + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ParseError(where + ": non-finite value");
  return v;
}

std::pair<double, double> pair_at(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw ParseError(where + ": expected [x, y]");
  return {number_at(j[0], where + "[0]"), number_at(j[1], where + "[1]")};
}

AffineMap affine_from_json(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("A")) throw ParseError(where + ": expected {\"A\": ..., \"b\": ...}");
  const json& a = j["A"];
  if (!a.is_array() || a.size() != 2) throw ParseError(where + ".A: expected a 2x2 matrix");
  const auto [a11, a12] = pair_at(a[0], where + ".A[0]");
  const auto [a21, a22] = pair_at(a[1], where + ".A[1]");
  AffineMap m{a11, a12, a21, a22, 0, 0};
  if (j.contains("b")) std::tie(m.bx, m.by) = pair_at(j["b"], where + ".b");
  return m;
}

}  // namespace

MotionField MotionField::from_json_text(std::string_view text, std::size_t frames,
                                        std::size_t height, std::size_t width) {
  const json j = parse_json(text);
  if (!j.is_object()) throw ParseError("motion: expected an object");
  const std::string type = j.value("type", std::string("affine"));
  if (type == "identity") return identity(frames, height, width);
  if (type == "affine") {
    if (j.contains("steps")) {
      const json& s = j["steps"];
      if (!s.is_array()) throw ParseError("motion.steps: expected a list");
      std::vector<AffineMap> steps;
      for (std::size_t i = 0; i < s.size(); ++i) {
        steps.push_back(affine_from_json(s[i], "motion.steps[" + std::to_string(i) + "]"));
      }
      if (steps.size() != frames - 1) {
        throw ParseError("motion.steps: expected " + std::to_string(frames - 1) + " entries, got " +
                         std::to_string(steps.size()));
      }
      return from_steps(frames, height, width, std::move(steps));
    }
    if (j.contains("step")) return uniform(frames, height, width, affine_from_json(j["step"], "motion.step"));
    throw ParseError("motion: affine type needs 'step' or 'steps'");
  }
  if (type == "sprites") {
    if (!j.contains("sprites") || !j["sprites"].is_array()) {
      throw ParseError("motion.sprites: expected a list");
    }
    std::vector<Sprite> sprites;
    for (std::size_t i = 0; i < j["sprites"].size(); ++i) {
      const json& s = j["sprites"][i];
      const std::string where = "motion.sprites[" + std::to_string(i) + "]";
      if (!s.is_object()) throw ParseError(where + ": expected an object");
      Sprite sp;
      std::tie(sp.cx, sp.cy) = pair_at(s.value("center", json::array({0, 0})), where + ".center");
      sp.radius = number_at(s.value("radius", json(1.0)), where + ".radius");
      std::tie(sp.vx, sp.vy) = pair_at(s.value("velocity", json::array({0, 0})), where + ".velocity");
      sprites.push_back(sp);
    }
    return from_sprites(frames, height, width, std::move(sprites));
  }
  throw ParseError("motion: unknown type '" + type + "'");
}

template <typename T>
TrackSet<T> synth_tracks(const MotionField& field, std::span<const Query> queries) {
  const std::size_t frames = field.frames;
  auto tracks = TrackSet<T>::zeros(frames, queries.size());
  for (const Query& q : queries) {
    if (q.t >= frames) {
      throw GenerationError("query frame " + std::to_string(q.t) + " outside 0.." +
                            std::to_string(frames - 1));
    }
  }

  if (field.kind == MotionField::Kind::affine) {
    if (field.steps.size() + 1 != frames) throw GenerationError("motion field does not cover all frames");
    std::vector<AffineMap> inverses;
    inverses.reserve(field.steps.size());
    for (const auto& s : field.steps) inverses.push_back(s.inverse());

    for (std::size_t m = 0; m < queries.size(); ++m) {
      const Query& q = queries[m];
      auto put = [&](std::size_t t, double x, double y) {
        tracks.points(t, m, 0) = static_cast<T>(x);
        tracks.points(t, m, 1) = static_cast<T>(y);
      };
      put(q.t, q.x, q.y);
      double x = q.x, y = q.y;
      for (std::size_t t = q.t + 1; t < frames; ++t) {
        if (!q.pinned) field.steps[t - 1].apply(x, y);
        put(t, x, y);
      }
      x = q.x;
      y = q.y;
      for (std::size_t t = q.t; t-- > 0;) {
        if (!q.pinned) inverses[t].apply(x, y);
        put(t, x, y);
      }
    }
    return tracks;
  }

  std::vector<std::uint8_t> visible(frames * queries.size(), 1);
  const double max_x = static_cast<double>(field.width) - 0.5;
  const double max_y = static_cast<double>(field.height) - 0.5;
  for (std::size_t m = 0; m < queries.size(); ++m) {
    const Query& q = queries[m];
    double vx = 0, vy = 0;
    if (!q.pinned) {
      const double t0 = static_cast<double>(q.t);
      // Later sprites are drawn on top.
      for (const Sprite& s : field.sprites) {
        const double dx = q.x - (s.cx + s.vx * t0);
        const double dy = q.y - (s.cy + s.vy * t0);
        if (dx * dx + dy * dy <= s.radius * s.radius) {
          vx = s.vx;
          vy = s.vy;
        }
      }
    }
    for (std::size_t t = 0; t < frames; ++t) {
      const double dt = static_cast<double>(t) - static_cast<double>(q.t);
      const double x = q.x + vx * dt;
      const double y = q.y + vy * dt;
      tracks.points(t, m, 0) = static_cast<T>(x);
      tracks.points(t, m, 1) = static_cast<T>(y);
      visible[t * queries.size() + m] = (x >= -0.5 && x < max_x && y >= -0.5 && y < max_y) ? 1 : 0;
    }
  }
  tracks.visible = std::move(visible);
  return tracks;
}

template TrackSet<float> synth_tracks(const MotionField&, std::span<const Query>);
template TrackSet<double> synth_tracks(const MotionField&, std::span<const Query>);

double coverage(std::span<const std::pair<double, double>> points, double radius,
                std::size_t height, std::size_t width) {
  if (!(radius > 0)) throw ConfigError("coverage radius must be > 0");
  if (height == 0 || width == 0) throw ConfigError("grid extents must be >= 1");
  const double r2 = radius * radius;
  std::size_t covered = 0;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (const auto& [px, py] : points) {
        const double dx = px - static_cast<double>(x);
        const double dy = py - static_cast<double>(y);
        if (dx * dx + dy * dy <= r2) {
          ++covered;
          break;
        }
      }
    }
  }
  return static_cast<double>(covered) / static_cast<double>(height * width);
}

template <typename T>
double coverage(const TrackSet<T>& tracks, std::size_t t, double radius, std::size_t height,
                std::size_t width) {
  if (t >= tracks.frames()) throw ConfigError("coverage frame out of range");
  std::vector<std::pair<double, double>> pts;
  for (std::size_t m = 0; m < tracks.count(); ++m) {
    if (tracks.is_visible(t, m)) pts.emplace_back(tracks.x(t, m), tracks.y(t, m));
  }
  return coverage(pts, radius, height, width);
}

template double coverage(const TrackSet<float>&, std::size_t, double, std::size_t, std::size_t);
template double coverage(const TrackSet<double>&, std::size_t, double, std::size_t, std::size_t);

std::string tracks_to_json(const TrackSet<float>& tracks) {
  tracks.validate();
  json j;
  j["T"] = tracks.frames();
  j["M"] = tracks.count();
  json pts = json::array();
  for (std::size_t t = 0; t < tracks.frames(); ++t) {
    json row = json::array();
    for (std::size_t m = 0; m < tracks.count(); ++m) row.push_back({tracks.x(t, m), tracks.y(t, m)});
    pts.push_back(std::move(row));
  }
  j["points"] = std::move(pts);
  if (tracks.visible) {
    json vis = json::array();
    for (std::size_t t = 0; t < tracks.frames(); ++t) {
      json row = json::array();
      for (std::size_t m = 0; m < tracks.count(); ++m) row.push_back(tracks.is_visible(t, m));
      vis.push_back(std::move(row));
    }
    j["visible"] = std::move(vis);
  }
  return j.dump();
}

TrackSet<float> tracks_from_json(std::string_view text) {
  const json j = parse_json(text);
  if (!j.is_object()) throw ParseError("tracks: expected an object");
  for (const char* key : {"T", "M", "points"}) {
    if (!j.contains(key)) throw ParseError(std::string("tracks: missing field '") + key + "'");
  }
  if (!j["T"].is_number_integer() || !j["M"].is_number_integer()) {
    throw ParseError("tracks: T and M must be integers");
  }
  const auto frames = j["T"].get<std::int64_t>();
  const auto count = j["M"].get<std::int64_t>();
  if (frames < 1) throw ParseError("tracks: T must be >= 1, got " + std::to_string(frames));
  if (count < 1) throw ParseError("tracks: M must be >= 1, got " + std::to_string(count));
  const auto nt = static_cast<std::size_t>(frames);
  const auto nm = static_cast<std::size_t>(count);

  const json& pts = j["points"];
  if (!pts.is_array() || pts.size() != nt) {
    throw ParseError("tracks.points: expected " + std::to_string(nt) + " frames");
  }
  auto out = TrackSet<float>::zeros(nt, nm);
  for (std::size_t t = 0; t < nt; ++t) {
    const std::string where = "tracks.points[" + std::to_string(t) + "]";
    if (!pts[t].is_array() || pts[t].size() != nm) {
      throw ParseError(where + ": expected " + std::to_string(nm) + " points");
    }
    for (std::size_t m = 0; m < nm; ++m) {
      const auto [x, y] = pair_at(pts[t][m], where + "[" + std::to_string(m) + "]");
      out.points(t, m, 0) = static_cast<float>(x);
      out.points(t, m, 1) = static_cast<float>(y);
    }
  }
  if (j.contains("visible") && !j["visible"].is_null()) {
    const json& vis = j["visible"];
    if (!vis.is_array() || vis.size() != nt) throw ParseError("tracks.visible: expected T rows");
    std::vector<std::uint8_t> mask(nt * nm);
    for (std::size_t t = 0; t < nt; ++t) {
      if (!vis[t].is_array() || vis[t].size() != nm) {
        throw ParseError("tracks.visible[" + std::to_string(t) + "]: expected M flags");
      }
      for (std::size_t m = 0; m < nm; ++m) {
        if (!vis[t][m].is_boolean()) throw ParseError("tracks.visible: flags must be booleans");
        mask[t * nm + m] = vis[t][m].get<bool>() ? 1 : 0;
      }
    }
    out.visible = std::move(mask);
  }
  return out;
}

void write_tracks(const std::filesystem::path& path, const TrackSet<float>& tracks) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << tracks_to_json(tracks) << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

TrackSet<float> read_tracks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return tracks_from_json(ss.str());
}

}  // namespace tracktention
