#include "dualad/binary_io.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iterator>

namespace dualad {

void ByteWriter::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::input, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
  if (!out) fail(ErrorKind::input, "short write to " + path.string());
}

ByteReader ByteReader::open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::input, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return ByteReader(std::move(bytes), path.string());
}

void ByteReader::need(std::size_t n) const {
  if (bytes_.size() - pos_ < n) fail(ErrorKind::decode, source_ + ": truncated file");
}

std::uint64_t ByteReader::get(std::size_t n) {
  need(n);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += n;
  return v;
}

void ByteReader::expect_magic(std::string_view m) {
  need(m.size());
  if (std::string_view(reinterpret_cast<const char*>(bytes_.data() + pos_), m.size()) != m)
    fail(ErrorKind::decode, source_ + ": bad magic, expected " + std::string(m));
  pos_ += m.size();
}

std::string ByteReader::str() {
  const auto n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::vector<std::uint8_t> ByteReader::raw(std::size_t n) {
  need(n);
  std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
  pos_ += n;
  return out;
}

std::vector<float> ByteReader::f32_array(std::size_t max_count) {
  const auto n = u64();
  if (n > max_count) fail(ErrorKind::decode, source_ + ": array length " + std::to_string(n) + " out of range");
  std::vector<float> out(n);
  for (auto& v : out) v = f32();
  return out;
}

std::vector<double> ByteReader::f64_array(std::size_t max_count) {
  const auto n = u64();
  if (n > max_count) fail(ErrorKind::decode, source_ + ": array length " + std::to_string(n) + " out of range");
  std::vector<double> out(n);
  for (auto& v : out) v = f64();
  return out;
}

std::string sha256_hex(std::span<const std::uint8_t> data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    fail(ErrorKind::numeric, "SHA-256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace dualad
