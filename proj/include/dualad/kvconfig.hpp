#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace dualad {

/// Plain-text `key = value` file. `#` starts a comment; blank lines are ignored.
///
/// Every lookup marks its key as consumed so that `reject_unknown()` can fail
/// fast on typos once a consumer has read everything it understands.
class KeyValueFile {
 public:
  static KeyValueFile parse(std::string_view text, const std::string& source_name = "<string>");
  static KeyValueFile load(const std::filesystem::path& path);

  bool contains(std::string_view key) const;
  std::optional<std::string> get(std::string_view key) const;
  std::string require(std::string_view key) const;

  std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
  std::int64_t require_int(std::string_view key) const;
  double get_double(std::string_view key, double fallback) const;
  std::string get_string(std::string_view key, const std::string& fallback) const;

  void set(const std::string& key, const std::string& value);

  /// Throws a configuration error listing every key that no lookup touched.
  void reject_unknown() const;

  /// Canonical `key=value\n` rendering, sorted by key. Stable across runs.
  std::string canonical_text() const;

  const std::string& source() const { return source_; }

 private:
  std::map<std::string, std::string, std::less<>> entries_;
  mutable std::set<std::string, std::less<>> consumed_;
  std::string source_;
};

std::int64_t parse_int(std::string_view text, std::string_view what);
double parse_double(std::string_view text, std::string_view what);

}  // namespace dualad
