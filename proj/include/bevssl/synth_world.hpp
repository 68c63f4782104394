#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "bevssl/error.hpp"
#include "bevssl/geometry.hpp"
#include "bevssl/rng.hpp"

namespace bevssl {

enum class MapClass : std::uint8_t { ped_crossing = 0, divider = 1, boundary = 2 };
inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<const char*, kNumClasses> kClassNames = {"ped_crossing", "divider", "boundary"};

// Observation channel layout.
inline constexpr std::size_t kObsChannels = 5;
inline constexpr std::size_t kClutterChannel = 3;
inline constexpr std::size_t kRangeChannel = 4;
inline constexpr std::size_t kNumSectors = 6;
inline constexpr double kSensorReferenceNoise = 0.3;  // noise level with a full-strength sensor spread
inline constexpr double kSensorSpreadCap = 1.5;

// The knobs that make up one "city".
struct StyleParams {
  double curvature_scale = 0.004;   // 1/m, spread of road curvature
  double road_density = 15.0;       // roads per km^2
  double lane_width = 3.5;          // m
  double crossing_frequency = 0.6;  // crossings per 100 m of road
  double noise_level = 0.3;         // observation corruption strength
  double clutter_density = 400.0;   // clutter structures per km^2

  static StyleParams city_a() { return {}; }
  static StyleParams city_b() { return {0.012, 25.0, 3.0, 1.2, 0.45, 900.0}; }

  static StyleParams preset(const std::string& name) {
    if (name == "city_A" || name == "A") return city_a();
    if (name == "city_B" || name == "B") return city_b();
    throw ConfigError("unknown style preset '" + name + "' (expected city_A or city_B)");
  }

  void validate() const {
    if (!(curvature_scale > 0.0) || !(road_density > 0.0) || !(lane_width > 0.0) || !(crossing_frequency > 0.0) ||
        !(noise_level > 0.0) || !(clutter_density > 0.0)) {
      throw ConfigError("style: every knob must be positive");
    }
  }
};

struct Extent {
  double x_min = -200.0;
  double y_min = -200.0;
  double x_max = 200.0;
  double y_max = 200.0;

  bool contains(Vec2 p) const { return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max; }
  double area_km2() const { return (x_max - x_min) * (y_max - y_min) * 1e-6; }
};

struct Polyline {
  MapClass cls = MapClass::divider;
  std::vector<Vec2> points;
  bool closed = false;  // filled polygon (crossings)
  bool dashed = false;  // painted with gaps; ground truth stays continuous
};

// Clutter: false structures that resemble one of the map classes.
struct ClutterItem {
  MapClass mimics = MapClass::divider;
  std::vector<Vec2> points;
};

struct Road {
  std::vector<Vec2> centerline;
  int lanes_per_direction = 1;
  double lane_width = 3.5;
};

// Unit draws for the per-world sensor response; the renderer scales them by
// the noise level, so a noiseless world has the identity response.
struct SensorDraws {
  std::array<double, kNumClasses> gain{};    // dims own-class evidence
  std::array<double, kNumClasses> offset{};  // background level
  std::array<std::array<double, kNumClasses>, kNumClasses> crosstalk{};  // [channel][class]
};

struct WorldMap {
  std::vector<Polyline> polylines;
  std::vector<ClutterItem> clutter;
  std::vector<Road> roads;
  StyleParams style;
  Extent extent;
  std::uint64_t seed = 0;
  double dash_on = 3.0;  // m
  double dash_off = 6.0;
  SensorDraws sensor;

  std::size_t count(MapClass c) const {
    return static_cast<std::size_t>(
        std::count_if(polylines.begin(), polylines.end(), [c](const Polyline& p) { return p.cls == c; }));
  }
};

namespace synth_detail {

inline Vec2 sub(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

// Left-hand unit normals of a polyline.
inline std::vector<Vec2> normals(const std::vector<Vec2>& pts) {
  std::vector<Vec2> n(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec2 a = pts[i == 0 ? 0 : i - 1];
    const Vec2 b = pts[i + 1 == pts.size() ? i : i + 1];
    Vec2 t = sub(b, a);
    const double l = norm(t);
    if (l > 0.0) t = {t.x / l, t.y / l};
    n[i] = {-t.y, t.x};
  }
  return n;
}

inline std::vector<Vec2> offset(const std::vector<Vec2>& pts, const std::vector<Vec2>& nrm, double d) {
  std::vector<Vec2> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) out[i] = {pts[i].x + d * nrm[i].x, pts[i].y + d * nrm[i].y};
  return out;
}

// Splits a polyline into the runs of consecutive vertices inside the extent.
inline std::vector<std::vector<Vec2>> clip_runs(const std::vector<Vec2>& pts, const Extent& e) {
  std::vector<std::vector<Vec2>> runs;
  std::vector<Vec2> cur;
  for (const Vec2& p : pts) {
    if (e.contains(p)) {
      cur.push_back(p);
    } else if (!cur.empty()) {
      if (cur.size() >= 2) runs.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (cur.size() >= 2) runs.push_back(std::move(cur));
  return runs;
}

inline bool segment_intersection(Vec2 p, Vec2 p2, Vec2 q, Vec2 q2, double& t, double& u) {
  const Vec2 r = sub(p2, p), s = sub(q2, q);
  const double den = r.x * s.y - r.y * s.x;
  if (std::fabs(den) < 1e-12) return false;
  const Vec2 qp = sub(q, p);
  t = (qp.x * s.y - qp.y * s.x) / den;
  u = (qp.x * r.y - qp.y * r.x) / den;
  return t >= 0.0 && t <= 1.0 && u >= 0.0 && u <= 1.0;
}

inline std::vector<double> arc_lengths(const std::vector<Vec2>& pts) {
  std::vector<double> s(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i) s[i] = s[i - 1] + norm(sub(pts[i], pts[i - 1]));
  return s;
}

// Point and unit tangent at arc length `at`.
inline std::pair<Vec2, Vec2> point_at(const std::vector<Vec2>& pts, const std::vector<double>& s, double at) {
  if (pts.size() == 1) return {pts[0], {1.0, 0.0}};
  at = std::clamp(at, 0.0, s.back());
  std::size_t i = static_cast<std::size_t>(std::upper_bound(s.begin(), s.end(), at) - s.begin());
  if (i == 0) i = 1;
  if (i >= pts.size()) i = pts.size() - 1;
  const double seg = s[i] - s[i - 1];
  const double f = seg > 0.0 ? (at - s[i - 1]) / seg : 0.0;
  const Vec2 a = pts[i - 1], b = pts[i];
  Vec2 t = sub(b, a);
  const double l = norm(t);
  if (l > 0.0) t = {t.x / l, t.y / l};
  return {{a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)}, t};
}

inline std::vector<Vec2> crossing_rect(Vec2 c, Vec2 t, double half_across, double depth) {
  const Vec2 n{-t.y, t.x};
  const double hd = 0.5 * depth;
  return {{c.x - hd * t.x - half_across * n.x, c.y - hd * t.y - half_across * n.y},
          {c.x + hd * t.x - half_across * n.x, c.y + hd * t.y - half_across * n.y},
          {c.x + hd * t.x + half_across * n.x, c.y + hd * t.y + half_across * n.y},
          {c.x - hd * t.x + half_across * n.x, c.y - hd * t.y + half_across * n.y}};
}

inline std::vector<Vec2> random_road(Rng& rng, const StyleParams& style, const Extent& e) {
  const double w = e.x_max - e.x_min, h = e.y_max - e.y_min;
  const double cx = 0.5 * (e.x_min + e.x_max), cy = 0.5 * (e.y_min + e.y_max);
  // Start just inside a random side, heading roughly through the interior.
  Vec2 p;
  const std::uint64_t side = rng.index(4);
  const double f = rng.uniform(0.15, 0.85);
  constexpr double inset = 1.0;
  if (side == 0) p = {e.x_min + inset, e.y_min + f * h};
  else if (side == 1) p = {e.x_max - inset, e.y_min + f * h};
  else if (side == 2) p = {e.x_min + f * w, e.y_min + inset};
  else p = {e.x_min + f * w, e.y_max - inset};
  const Vec2 target{cx + rng.uniform(-0.3, 0.3) * w, cy + rng.uniform(-0.3, 0.3) * h};
  double heading = std::atan2(target.y - p.y, target.x - p.x);

  constexpr double step = 2.0;
  const double max_len = 3.0 * (w + h);
  std::vector<Vec2> pts{p};
  double travelled = 0.0, seg_left = 0.0, kappa = 0.0;
  while (travelled < max_len) {
    if (seg_left <= 0.0) {
      seg_left = rng.uniform(20.0, 60.0);
      kappa = std::clamp(rng.normal() * style.curvature_scale, -3.0 * style.curvature_scale, 3.0 * style.curvature_scale);
    }
    heading += kappa * step;
    p = {p.x + step * std::cos(heading), p.y + step * std::sin(heading)};
    if (!e.contains(p)) break;
    pts.push_back(p);
    travelled += step;
    seg_left -= step;
  }
  return pts;
}

}  // namespace synth_detail

// Road network with lane dividers, boundaries, crossings and clutter.
// Deterministic in (seed, style, extent).
inline WorldMap generate_world(std::uint64_t seed, const StyleParams& style, const Extent& extent = {}) {
  using namespace synth_detail;
  style.validate();
  WorldMap world;
  world.style = style;
  world.extent = extent;
  world.seed = seed;

  Rng rng = Rng::stream(seed, {0x77});
  world.dash_on = rng.uniform(2.0, 4.0);
  world.dash_off = world.dash_on * rng.uniform(1.0, 2.0);

  const double area = extent.area_km2();
  const int n_roads = std::max(1, static_cast<int>(std::lround(style.road_density * area)));
  for (int i = 0; i < n_roads; ++i) {
    Rng rr = rng.split(static_cast<std::uint64_t>(i));
    Road road;
    for (int attempt = 0; attempt < 16 && road.centerline.size() < 20; ++attempt) road.centerline = random_road(rr, style, extent);
    if (road.centerline.size() < 2) continue;
    road.lanes_per_direction = rr.bernoulli(0.5) ? 2 : 1;
    road.lane_width = style.lane_width;
    world.roads.push_back(std::move(road));
  }

  for (const Road& road : world.roads) {
    const auto nrm = normals(road.centerline);
    const int lanes = road.lanes_per_direction;
    for (int k = -(lanes - 1); k <= lanes - 1; ++k) {
      for (auto& run : clip_runs(offset(road.centerline, nrm, k * road.lane_width), extent)) {
        world.polylines.push_back({MapClass::divider, std::move(run), false, k != 0});
      }
    }
    for (int sgn : {-1, 1}) {
      for (auto& run : clip_runs(offset(road.centerline, nrm, sgn * lanes * road.lane_width), extent)) {
        world.polylines.push_back({MapClass::boundary, std::move(run), false, false});
      }
    }
  }

  Rng crng = Rng::stream(seed, {0x78});
  auto add_crossing = [&](const Road& road, Vec2 c, Vec2 t) {
    auto rect = crossing_rect(c, t, road.lanes_per_direction * road.lane_width, 4.0);
    for (const Vec2& v : rect) {
      if (!extent.contains(v)) return false;
    }
    world.polylines.push_back({MapClass::ped_crossing, std::move(rect), true, false});
    return true;
  };
  // Mid-block crossings.
  for (const Road& road : world.roads) {
    const auto s = arc_lengths(road.centerline);
    const double len = s.back();
    const int n = crng.poisson(style.crossing_frequency * len / 100.0);
    for (int i = 0; i < n; ++i) {
      const double at = crng.uniform(0.0, len);
      auto [c, t] = point_at(road.centerline, s, at);
      add_crossing(road, c, t);
    }
  }
  // Crossings guarding intersections.
  const double p_guard = std::min(1.0, 0.5 * style.crossing_frequency);
  for (std::size_t a = 0; a < world.roads.size(); ++a) {
    for (std::size_t b = a + 1; b < world.roads.size(); ++b) {
      const auto& ra = world.roads[a].centerline;
      const auto& rb = world.roads[b].centerline;
      const auto sa = arc_lengths(ra);
      for (std::size_t i = 0; i + 1 < ra.size(); ++i) {
        for (std::size_t j = 0; j + 1 < rb.size(); ++j) {
          double t = 0, u = 0;
          if (!segment_intersection(ra[i], ra[i + 1], rb[j], rb[j + 1], t, u)) continue;
          if (!crng.bernoulli(p_guard)) continue;
          const double at = sa[i] + t * (sa[i + 1] - sa[i]);
          const double back = world.roads[b].lanes_per_direction * world.roads[b].lane_width + 3.0;
          auto [c, tan] = point_at(ra, sa, at - back);
          add_crossing(world.roads[a], c, tan);
        }
      }
    }
  }
  if (world.count(MapClass::ped_crossing) == 0 && !world.roads.empty()) {
    for (int attempt = 0; attempt < 64 && world.count(MapClass::ped_crossing) == 0; ++attempt) {
      const Road& road = world.roads[crng.index(world.roads.size())];
      const auto s = arc_lengths(road.centerline);
      auto [c, t] = point_at(road.centerline, s, crng.uniform(0.2, 0.8) * s.back());
      add_crossing(road, c, t);
    }
  }

  Rng srng = Rng::stream(seed, {0x7A});
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    world.sensor.gain[k] = srng.uniform();
    world.sensor.offset[k] = srng.uniform();
    for (std::size_t j = 0; j < kNumClasses; ++j) world.sensor.crosstalk[k][j] = k == j ? 0.0 : srng.uniform();
  }

  Rng krng = Rng::stream(seed, {0x79});
  const int n_clutter = static_cast<int>(std::lround(style.clutter_density * area));
  for (int i = 0; i < n_clutter; ++i) {
    const Vec2 c{krng.uniform(extent.x_min, extent.x_max), krng.uniform(extent.y_min, extent.y_max)};
    const double len = krng.uniform(1.5, 6.0), ang = krng.uniform(0.0, std::numbers::pi);
    const Vec2 d{0.5 * len * std::cos(ang), 0.5 * len * std::sin(ang)};
    ClutterItem item;
    item.mimics = static_cast<MapClass>(krng.index(kNumClasses));
    item.points = {{c.x - d.x, c.y - d.y}, {c.x + d.x, c.y + d.y}};
    if (extent.contains(item.points[0]) && extent.contains(item.points[1])) world.clutter.push_back(std::move(item));
  }
  return world;
}

// Perturbs every knob multiplicatively by up to +/- amount.
inline StyleParams jitter_style(const StyleParams& s, Rng& rng, double amount) {
  auto j = [&](double v) { return v * (1.0 + rng.uniform(-amount, amount)); };
  StyleParams out = s;
  out.curvature_scale = j(s.curvature_scale);
  out.road_density = j(s.road_density);
  out.lane_width = j(s.lane_width);
  out.crossing_frequency = j(s.crossing_frequency);
  out.noise_level = j(s.noise_level);
  out.clutter_density = j(s.clutter_density);
  return out;
}

struct FramePose {
  std::size_t frame = 0;
  Pose2 pose;
};

struct SequenceParams {
  std::size_t n_frames = 12;
  double speed_min = 0.0;  // m/s
  double speed_max = 10.0;
  double frame_dt = 1.0;   // s
  double dwell_probability = 0.15;
};

// Ego trajectory along the right-hand lane of one road, with piecewise
// constant speeds and occasional stops.
inline std::vector<FramePose> generate_sequence(const WorldMap& world, std::uint64_t seed, const SequenceParams& sp) {
  using namespace synth_detail;
  if (sp.n_frames < 1) throw ConfigError("generate_sequence: n_frames must be at least 1");
  if (world.roads.empty()) throw ConfigError("generate_sequence: world has no roads");
  if (sp.speed_min < 0.0 || sp.speed_max < sp.speed_min) throw ConfigError("generate_sequence: invalid speed range");
  Rng rng = Rng::stream(seed, {0x5E9});
  const Road& road = world.roads[rng.index(world.roads.size())];
  const bool forward = rng.bernoulli(0.5);
  std::vector<Vec2> center = road.centerline;
  if (!forward) std::reverse(center.begin(), center.end());
  const auto lane = offset(center, normals(center), -0.5 * road.lane_width);
  const auto s = arc_lengths(lane);
  const double len = s.back();
  const double expected = sp.speed_max * sp.frame_dt * static_cast<double>(sp.n_frames);
  const double s_max = std::max(0.0, len - expected);
  double at = rng.uniform(0.0, 1.0) * std::min(s_max, 0.6 * len);

  std::vector<FramePose> poses;
  poses.reserve(sp.n_frames);
  double speed = 0.0;
  int seg_left = 0;
  for (std::size_t f = 0; f < sp.n_frames; ++f) {
    auto [p, t] = point_at(lane, s, at);
    poses.push_back({f, Pose2(p.x, p.y, std::atan2(t.y, t.x))});
    if (seg_left <= 0) {
      seg_left = 2 + static_cast<int>(rng.index(5));
      speed = rng.bernoulli(sp.dwell_probability) ? 0.0 : rng.uniform(sp.speed_min, sp.speed_max);
    }
    --seg_left;
    at = std::min(len, at + speed * sp.frame_dt);
  }
  return poses;
}

namespace synth_detail {

// Marks every cell touched by densely sampled points of the polyline. With a
// dash pattern, only the painted parts (by arc length) are marked.
inline void stroke(const std::vector<Vec2>& ego_pts, const GridSpec& g, double* plane, double value = 1.0,
                   double dash_on = 0.0, double dash_off = 0.0, double gap_value = 0.0) {
  const double step = g.cell / 4.0;
  const double reach = std::hypot(std::max(std::fabs(g.x_min), std::fabs(g.x_max)), std::max(std::fabs(g.y_min), std::fabs(g.y_max)));
  const std::size_t cols = g.cols();
  double arc = 0.0;
  for (std::size_t i = 0; i + 1 < ego_pts.size(); ++i) {
    const Vec2 a = ego_pts[i], b = ego_pts[i + 1];
    const double len = norm(sub(b, a));
    if (std::min(norm(a), norm(b)) > reach + len) {
      arc += len;
      continue;
    }
    const auto n = static_cast<std::size_t>(std::ceil(len / step));
    for (std::size_t k = 0; k <= n; ++k) {
      const double f = n ? static_cast<double>(k) / static_cast<double>(n) : 0.0;
      const auto hit = g.cell_of({a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)});
      if (!hit) continue;
      double v = value;
      if (dash_on > 0.0 && std::fmod(arc + f * len, dash_on + dash_off) >= dash_on) v = gap_value;
      double& cell = plane[hit->first * cols + hit->second];
      cell = std::max(cell, v);
    }
    arc += len;
  }
}

// Even-odd fill of a closed polygon, sampled at cell centers.
inline void fill(const std::vector<Vec2>& poly, const GridSpec& g, double* plane) {
  double xmin = poly[0].x, xmax = poly[0].x, ymin = poly[0].y, ymax = poly[0].y;
  for (const Vec2& p : poly) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  if (xmax < g.x_min || xmin > g.x_max || ymax < g.y_min || ymin > g.y_max) return;
  const std::size_t rows = g.rows(), cols = g.cols();
  const auto lo = [&](double v, double mn) { return static_cast<std::size_t>(std::max(0.0, std::floor((v - mn) / g.cell))); };
  const std::size_t r0 = lo(xmin, g.x_min), c0 = lo(ymin, g.y_min);
  const std::size_t r1 = std::min(rows - 1, static_cast<std::size_t>(std::max(0.0, std::floor((xmax - g.x_min) / g.cell))));
  const std::size_t c1 = std::min(cols - 1, static_cast<std::size_t>(std::max(0.0, std::floor((ymax - g.y_min) / g.cell))));
  for (std::size_t r = r0; r <= r1; ++r) {
    for (std::size_t c = c0; c <= c1; ++c) {
      const Vec2 q = g.cell_center(r, c);
      bool inside = false;
      for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        if ((poly[i].y > q.y) != (poly[j].y > q.y) &&
            q.x < (poly[j].x - poly[i].x) * (q.y - poly[i].y) / (poly[j].y - poly[i].y) + poly[i].x) {
          inside = !inside;
        }
      }
      if (inside) plane[r * cols + c] = 1.0;
    }
  }
}

inline std::vector<Vec2> to_ego(const std::vector<Vec2>& pts, const Pose2& pose) {
  const Pose2 inv = inverse(pose);
  std::vector<Vec2> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) out[i] = inv.apply(pts[i]);
  return out;
}

// Separable [k, 1, k] blur clamped to 1.
inline void smooth(const GridSpec& g, const double* in, double* out, double k = 0.25) {
  const std::size_t rows = g.rows(), cols = g.cols();
  std::vector<double> tmp(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double v = in[r * cols + c];
      if (c > 0) v += k * in[r * cols + c - 1];
      if (c + 1 < cols) v += k * in[r * cols + c + 1];
      tmp[r * cols + c] = v;
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double v = tmp[r * cols + c];
      if (r > 0) v += k * tmp[(r - 1) * cols + c];
      if (r + 1 < rows) v += k * tmp[(r + 1) * cols + c];
      out[r * cols + c] = std::min(1.0, v);
    }
  }
}

}  // namespace synth_detail

// Binary ground truth, one channel per class, in the ego frame of `pose`.
inline Raster rasterize_gt(const WorldMap& world, const Pose2& pose, const GridSpec& spec) {
  using namespace synth_detail;
  Raster out(spec, kNumClasses, 0.0);
  for (const Polyline& pl : world.polylines) {
    const auto ego = to_ego(pl.points, pose);
    double* plane = out.channel(static_cast<std::size_t>(pl.cls));
    if (pl.closed) {
      fill(ego, spec, plane);
    } else {
      stroke(ego, spec, plane);
    }
  }
  return out;
}

// Camera sector (0..5, 60 degrees each, 0 = straight ahead, counter-clockwise)
// of every cell by the bearing of its center.
inline std::vector<std::uint8_t> sector_map(const GridSpec& spec) {
  std::vector<std::uint8_t> out(spec.cells());
  const double width = std::numbers::pi / 3.0;
  for (std::size_t r = 0; r < spec.rows(); ++r) {
    for (std::size_t c = 0; c < spec.cols(); ++c) {
      const Vec2 p = spec.cell_center(r, c);
      double b = std::atan2(p.y, p.x) + 0.5 * width;
      if (b < 0.0) b += 2.0 * std::numbers::pi;
      out[r * spec.cols() + c] = static_cast<std::uint8_t>(static_cast<int>(std::floor(b / width)) % static_cast<int>(kNumSectors));
    }
  }
  return out;
}

struct Observation {
  Raster raster;  // kObsChannels channels
  std::vector<std::uint8_t> sectors;
};

// Reference range at which corruption saturates.
inline constexpr double kNoiseRange = 40.0;

// Noisy BEV evidence of the map, standing in for camera features lifted to
// BEV. Corruption (dash wear, dropouts, additive noise) grows with distance
// from the ego vehicle and with the style's noise level; clutter adds false
// structures to the evidence and to its own channel.
inline Observation render_observation(const WorldMap& world, const Pose2& pose, const GridSpec& spec,
                                      std::uint64_t noise_seed) {
  using namespace synth_detail;
  const std::size_t rows = spec.rows(), cols = spec.cols(), n = rows * cols;
  const double noise = world.style.noise_level;
  const double wear = std::min(1.0, 2.0 * noise);

  Raster painted(spec, kNumClasses + 1, 0.0);
  for (const Polyline& pl : world.polylines) {
    const auto ego = to_ego(pl.points, pose);
    double* plane = painted.channel(static_cast<std::size_t>(pl.cls));
    if (pl.closed) {
      fill(ego, spec, plane);
    } else if (pl.dashed) {
      stroke(ego, spec, plane, 1.0, world.dash_on, world.dash_off, 1.0 - wear);
    } else {
      stroke(ego, spec, plane);
    }
  }
  Raster clutter(spec, kNumClasses, 0.0);
  for (const ClutterItem& item : world.clutter) {
    const auto ego = to_ego(item.points, pose);
    stroke(ego, spec, clutter.channel(static_cast<std::size_t>(item.mimics)));
    stroke(ego, spec, painted.channel(kClutterChannel));
  }

  Observation obs{Raster(spec, kObsChannels, 0.0), sector_map(spec)};
  Raster& out = obs.raster;
  std::vector<double> smoothed(n), smoothed_clutter(n);
  Rng rng = Rng::stream(noise_seed, {0x0B5});
  double max_range = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const Vec2 p = spec.cell_center(r, c);
      max_range = std::max(max_range, std::hypot(p.x, p.y));
    }
  }
  std::vector<double> sigma(n), drop(n);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const Vec2 p = spec.cell_center(r, c);
      const double range = std::hypot(p.x, p.y);
      const double f = std::min(1.0, range / kNoiseRange);
      sigma[r * cols + c] = noise * (0.1 + 0.9 * f);
      drop[r * cols + c] = std::min(0.9, noise * 0.8 * f);
      out.channel(kRangeChannel)[r * cols + c] = range / max_range;
    }
  }
  std::vector<std::uint8_t> dropped(n);
  for (std::size_t i = 0; i < n; ++i) dropped[i] = noise > 0.0 && rng.bernoulli(drop[i]);

  // Sensor response: gain and background offset per channel plus cross-talk
  // from the other classes, all growing with the noise level.
  const double spread = std::min(kSensorSpreadCap, noise / kSensorReferenceNoise);
  std::vector<std::vector<double>> signal(kNumClasses, std::vector<double>(n));
  for (std::size_t k = 0; k < kNumClasses; ++k) smooth(spec, painted.channel(k), signal[k].data());
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    const SensorDraws& sd = world.sensor;
    const double gain = 1.0 - 0.5 * spread * sd.gain[k];
    const double offset = 0.4 * spread * sd.offset[k];
    smooth(spec, clutter.channel(k), smoothed_clutter.data());
    double* dst = out.channel(k);
    for (std::size_t i = 0; i < n; ++i) {
      double v = dropped[i] ? 0.0 : gain * signal[k][i];
      if (spread > 0.0 && !dropped[i]) {
        for (std::size_t j = 0; j < kNumClasses; ++j) {
          if (j != k) v += 0.3 * spread * sd.crosstalk[k][j] * signal[j][i];
        }
      }
      v += offset + 0.7 * smoothed_clutter[i];
      if (noise > 0.0) v += sigma[i] * rng.normal();
      dst[i] = std::clamp(v, 0.0, 1.0);
    }
  }
  smooth(spec, painted.channel(kClutterChannel), smoothed.data());
  double* dst = out.channel(kClutterChannel);
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.6 * smoothed[i];
    if (noise > 0.0) v += sigma[i] * rng.normal();
    dst[i] = std::clamp(v, 0.0, 1.0);
  }
  return obs;
}

}  // namespace bevssl
