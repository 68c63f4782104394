#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bevssl/error.hpp"

namespace bevssl {

inline double normalize_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// Planar rigid transform. Applied to a point p it gives R(yaw) p + (x, y).
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  Pose2() = default;
  Pose2(double x_, double y_, double yaw_) : x(x_), y(y_), yaw(normalize_angle(yaw_)) {}

  Vec2 apply(Vec2 p) const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    return {x + c * p.x - s * p.y, y + s * p.x + c * p.y};
  }

  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(yaw); }
};

inline Pose2 compose(const Pose2& a, const Pose2& b) {
  const Vec2 t = a.apply({b.x, b.y});
  return Pose2(t.x, t.y, a.yaw + b.yaw);
}

inline Pose2 inverse(const Pose2& p) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  return Pose2(-(c * p.x + s * p.y), s * p.x - c * p.y, -p.yaw);
}

// Pose of frame b expressed in frame a.
inline Pose2 relative_pose(const Pose2& frame_a, const Pose2& frame_b) { return compose(inverse(frame_a), frame_b); }

// Axis-aligned BEV region in the ego frame. Rows run along x (row 0 at
// x_min), columns along y (column 0 at y_min).
struct GridSpec {
  double x_min = -45.0;
  double x_max = 45.0;
  double y_min = -15.0;
  double y_max = 15.0;
  double cell = 0.3;

  static GridSpec paper() { return {-45.0, 45.0, -15.0, 15.0, 0.3}; }
  static GridSpec small() { return {-24.0, 24.0, -8.0, 8.0, 0.5}; }
  static GridSpec square(std::size_t n, double cell) {
    const double half = 0.5 * static_cast<double>(n) * cell;
    return {-half, half, -half, half, cell};
  }

  std::size_t rows() const { return static_cast<std::size_t>(std::llround((x_max - x_min) / cell)); }
  std::size_t cols() const { return static_cast<std::size_t>(std::llround((y_max - y_min) / cell)); }
  std::size_t cells() const { return rows() * cols(); }

  void validate() const {
    if (!(cell > 0.0) || !(x_max > x_min) || !(y_max > y_min)) throw ConfigError("grid: empty extent or non-positive cell");
    const double rx = (x_max - x_min) / cell, ry = (y_max - y_min) / cell;
    if (std::fabs(rx - std::round(rx)) > 1e-9 || std::fabs(ry - std::round(ry)) > 1e-9) {
      throw ConfigError("grid: extents are not integer multiples of the cell size");
    }
  }

  Vec2 cell_center(std::size_t row, std::size_t col) const {
    if (row >= rows() || col >= cols()) {
      throw ContractError("cell_center: (" + std::to_string(row) + ", " + std::to_string(col) + ") outside " +
                          std::to_string(rows()) + "x" + std::to_string(cols()));
    }
    return {x_min + (static_cast<double>(row) + 0.5) * cell, y_min + (static_cast<double>(col) + 0.5) * cell};
  }

  // Cell containing a metric point, if inside the region.
  std::optional<std::pair<std::size_t, std::size_t>> cell_of(Vec2 p) const {
    const double r = std::floor((p.x - x_min) / cell);
    const double c = std::floor((p.y - y_min) / cell);
    if (!(r >= 0.0) || !(c >= 0.0) || r >= static_cast<double>(rows()) || c >= static_cast<double>(cols())) {
      return std::nullopt;
    }
    return std::make_pair(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  }

  bool operator==(const GridSpec&) const = default;
};

// Multi-channel cell data. Layout: channel-major, row-major within a channel.
struct Raster {
  GridSpec spec;
  std::size_t channels = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;  // rows x cols

  Raster() = default;
  Raster(const GridSpec& s, std::size_t c, double fill = 0.0)
      : spec(s), channels(c), values(c * s.cells(), fill), valid(s.cells(), 1) {}

  std::size_t rows() const { return spec.rows(); }
  std::size_t cols() const { return spec.cols(); }
  std::size_t cells() const { return spec.cells(); }

  double& at(std::size_t c, std::size_t r, std::size_t col) { return values[(c * rows() + r) * cols() + col]; }
  double at(std::size_t c, std::size_t r, std::size_t col) const { return values[(c * rows() + r) * cols() + col]; }
  bool is_valid(std::size_t r, std::size_t col) const { return valid[r * cols() + col] != 0; }

  double* channel(std::size_t c) { return values.data() + c * cells(); }
  const double* channel(std::size_t c) const { return values.data() + c * cells(); }

  bool operator==(const Raster&) const = default;
};

enum class WarpMode { nearest, bilinear };

// Resamples `src`, observed at `src_pose`, into the frame `dst_pose`. Both
// poses are in a common (e.g. world) frame. Each destination cell center is
// carried into the source frame and looked up there; cells without a full,
// valid source neighbourhood become invalid.
inline Raster warp_raster(const Raster& src, const Pose2& src_pose, const Pose2& dst_pose,
                          WarpMode mode = WarpMode::nearest) {
  const GridSpec& g = src.spec;
  const std::size_t rows = g.rows(), cols = g.cols();
  Raster dst(g, src.channels, 0.0);
  const Pose2 to_src = relative_pose(src_pose, dst_pose);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t cell = r * cols + c;
      const Vec2 p = to_src.apply(g.cell_center(r, c));
      if (mode == WarpMode::nearest) {
        const auto hit = g.cell_of(p);
        if (!hit || !src.is_valid(hit->first, hit->second)) {
          dst.valid[cell] = 0;
          continue;
        }
        const std::size_t s = hit->first * cols + hit->second;
        for (std::size_t ch = 0; ch < src.channels; ++ch) dst.values[ch * rows * cols + cell] = src.values[ch * rows * cols + s];
      } else {
        const double u = (p.x - g.x_min) / g.cell - 0.5;
        const double v = (p.y - g.y_min) / g.cell - 0.5;
        const double r0 = std::floor(u), c0 = std::floor(v);
        if (!(r0 >= 0.0) || !(c0 >= 0.0) || r0 + 1.0 >= static_cast<double>(rows) || c0 + 1.0 >= static_cast<double>(cols)) {
          dst.valid[cell] = 0;
          continue;
        }
        const auto ri = static_cast<std::size_t>(r0), ci = static_cast<std::size_t>(c0);
        if (!src.is_valid(ri, ci) || !src.is_valid(ri + 1, ci) || !src.is_valid(ri, ci + 1) ||
            !src.is_valid(ri + 1, ci + 1)) {
          dst.valid[cell] = 0;
          continue;
        }
        const double fu = u - r0, fv = v - c0;
        for (std::size_t ch = 0; ch < src.channels; ++ch) {
          const double* plane = src.channel(ch);
          const double v00 = plane[ri * cols + ci], v01 = plane[ri * cols + ci + 1];
          const double v10 = plane[(ri + 1) * cols + ci], v11 = plane[(ri + 1) * cols + ci + 1];
          dst.values[ch * rows * cols + cell] =
              (1.0 - fu) * ((1.0 - fv) * v00 + fv * v01) + fu * ((1.0 - fv) * v10 + fv * v11);
        }
      }
    }
  }
  return dst;
}

}  // namespace bevssl
