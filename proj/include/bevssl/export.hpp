#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bevssl/error.hpp"
#include "bevssl/geometry.hpp"

namespace bevssl {

// 0 -> 0, 1 -> 255, clamped; invalid cells are black.
inline unsigned char to_pixel(double v) {
  return static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
}

inline std::vector<unsigned char> channel_pixels(const Raster& r, std::size_t channel) {
  if (channel >= r.channels) throw ContractError("channel_pixels: channel out of range");
  const std::size_t n = r.cells();
  std::vector<unsigned char> px(n);
  for (std::size_t i = 0; i < n; ++i) px[i] = r.valid[i] ? to_pixel(r.values[channel * n + i]) : 0;
  return px;
}

namespace export_detail {

inline void write_binary(const std::filesystem::path& path, const std::string& header, const std::vector<unsigned char>& body) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << header;
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace export_detail

// Binary graymap (P5), rows top to bottom.
inline void write_pgm(const std::filesystem::path& path, const Raster& r, std::size_t channel) {
  export_detail::write_binary(
      path, "P5\n" + std::to_string(r.cols()) + " " + std::to_string(r.rows()) + "\n255\n", channel_pixels(r, channel));
}

// Binary pixmap (P6) with the first three channels as R, G, B.
inline void write_ppm(const std::filesystem::path& path, const Raster& r) {
  if (r.channels < 3) throw ContractError("write_ppm: needs at least three channels");
  const std::size_t n = r.cells();
  std::vector<unsigned char> px(3 * n);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto ch = channel_pixels(r, c);
    for (std::size_t i = 0; i < n; ++i) px[3 * i + c] = ch[i];
  }
  export_detail::write_binary(path, "P6\n" + std::to_string(r.cols()) + " " + std::to_string(r.rows()) + "\n255\n", px);
}

// stem_c{k}.pgm for every channel, plus stem.ppm when there are three or more.
inline std::vector<std::filesystem::path> render_raster(const Raster& r, const std::filesystem::path& dir,
                                                        const std::string& stem) {
  std::vector<std::filesystem::path> written;
  for (std::size_t c = 0; c < r.channels; ++c) {
    written.push_back(dir / (stem + "_c" + std::to_string(c) + ".pgm"));
    write_pgm(written.back(), r, c);
  }
  if (r.channels >= 3) {
    written.push_back(dir / (stem + ".ppm"));
    write_ppm(written.back(), r);
  }
  return written;
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace bevssl
