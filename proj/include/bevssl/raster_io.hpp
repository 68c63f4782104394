#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bevssl/checkpoint.hpp"
#include "bevssl/geometry.hpp"

namespace bevssl {

inline constexpr std::string_view kRasterMagic = "BEVRAS01";

// Raster container: magic, x_min, x_max, y_min, y_max, cell (f64 each),
// channel count (u32), values (f64, channel-major), then the validity bitmap
// packed least-significant bit first.
inline std::vector<char> encode_raster(const Raster& r) {
  io::ByteWriter w;
  w.bytes(kRasterMagic);
  w.f64(r.spec.x_min);
  w.f64(r.spec.x_max);
  w.f64(r.spec.y_min);
  w.f64(r.spec.y_max);
  w.f64(r.spec.cell);
  w.u32(static_cast<std::uint32_t>(r.channels));
  for (double v : r.values) w.f64(v);
  const std::size_t n = r.cells();
  for (std::size_t i = 0; i < n; i += 8) {
    std::uint8_t byte = 0;
    for (std::size_t b = 0; b < 8 && i + b < n; ++b) byte |= static_cast<std::uint8_t>((r.valid[i + b] ? 1u : 0u) << b);
    w.u8(byte);
  }
  return w.data();
}

inline Raster decode_raster(std::vector<char> bytes, const std::string& source = "raster") {
  io::ByteReader rd(std::move(bytes), source);
  if (rd.bytes(kRasterMagic.size()) != kRasterMagic) throw IoError(source + ": bad raster magic");
  GridSpec spec;
  spec.x_min = rd.f64();
  spec.x_max = rd.f64();
  spec.y_min = rd.f64();
  spec.y_max = rd.f64();
  spec.cell = rd.f64();
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw IoError(source + ": " + e.what());
  }
  const std::uint32_t channels = rd.u32();
  Raster r(spec, channels);
  for (auto& v : r.values) v = rd.f64();
  const std::size_t n = r.cells();
  for (std::size_t i = 0; i < n; i += 8) {
    const std::uint8_t byte = rd.u8();
    for (std::size_t b = 0; b < 8 && i + b < n; ++b) r.valid[i + b] = (byte >> b) & 1u;
  }
  if (!rd.done()) throw IoError(source + ": trailing bytes after raster");
  return r;
}

inline void save_raster(const Raster& r, const std::filesystem::path& path) { io::write_file(path, encode_raster(r)); }
inline Raster load_raster(const std::filesystem::path& path) { return decode_raster(io::read_file(path), path.string()); }

struct PoseRow {
  std::size_t frame = 0;
  Pose2 pose;
};

inline void save_poses_csv(const std::vector<PoseRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "frame,x,y,yaw\n";
  char buf[128];
  for (const PoseRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.frame, r.pose.x, r.pose.y, r.pose.yaw);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<PoseRow> load_poses_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::string line;
  if (!std::getline(in, line) || line != "frame,x,y,yaw") throw IoError(path.string() + ": bad poses header");
  std::vector<PoseRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string f, x, y, yaw;
    if (!std::getline(ss, f, ',') || !std::getline(ss, x, ',') || !std::getline(ss, y, ',') || !std::getline(ss, yaw)) {
      throw IoError(path.string() + ": malformed row '" + line + "'");
    }
    try {
      rows.push_back({std::stoul(f), Pose2(std::stod(x), std::stod(y), std::stod(yaw))});
    } catch (const std::exception&) {
      throw IoError(path.string() + ": malformed row '" + line + "'");
    }
  }
  return rows;
}

}  // namespace bevssl
