#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dualad/error.hpp"

namespace dualad {

/// Little-endian byte sink for the on-disk artifacts.
class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) { put(v); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void f32_array(std::span<const float> values) {
    u64(values.size());
    for (float v : values) f32(v);
  }
  void f64_array(std::span<const double> values) {
    u64(values.size());
    for (double v : values) f64(v);
  }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  void save(const std::filesystem::path& path) const;

 private:
  template <typename T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked little-endian reader. Truncation is a decode error.
class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}
  static ByteReader open(const std::filesystem::path& path);

  void expect_magic(std::string_view m);
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str();
  std::vector<std::uint8_t> raw(std::size_t n);
  std::vector<float> f32_array(std::size_t max_count);
  std::vector<double> f64_array(std::size_t max_count);

  bool at_end() const { return pos_ == bytes_.size(); }
  const std::string& source() const { return source_; }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::uint64_t get(std::size_t n);
  void need(std::size_t n) const;

  std::vector<std::uint8_t> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(std::string_view text);

}  // namespace dualad
