#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "bevssl/error.hpp"
#include "bevssl/param_set.hpp"

namespace bevssl {

namespace io {

// Little-endian byte buffer writer/reader used by every binary container.
class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  const std::vector<char>& data() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(std::vector<char> data, std::string source) : buf_(std::move(data)), source_(std::move(source)) {}

  bool done() const { return pos_ == buf_.size(); }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw IoError(source_ + ": truncated file");
  }

  std::vector<char> buf_;
  std::size_t pos_ = 0;
  std::string source_;
};

inline void write_file(const std::filesystem::path& path, const std::vector<char>& data) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace io

inline constexpr std::string_view kCheckpointMagic = "BEVSSL01";

// Checkpoint layout: magic, then per parameter name length (u32), name bytes,
// rank (u32), dims (u32 each) and the values as little-endian float64.
inline std::vector<char> encode_checkpoint(const ParamSet& params) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  for (const Param& p : params) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p.value.values()) w.f64(v);
  }
  return w.data();
}

inline ParamSet decode_checkpoint(std::vector<char> bytes, const std::string& source = "checkpoint") {
  io::ByteReader r(std::move(bytes), source);
  if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) throw IoError(source + ": bad checkpoint magic");
  ParamSet params;
  while (!r.done()) {
    const std::string name = r.bytes(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw IoError(source + ": implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) v = r.f64();
    params.add(name, Tensor(std::move(shape), std::move(values)));
  }
  return params;
}

inline void save_checkpoint(const ParamSet& params, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(params));
}

inline ParamSet load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

}  // namespace bevssl
