#include "dualad/kvconfig.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "dualad/error.hpp"

namespace dualad {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::int64_t parse_int(std::string_view text, std::string_view what) {
  std::int64_t value = 0;
  const auto t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty())
    fail(ErrorKind::config, std::string(what) + ": expected an integer, got '" + std::string(text) + "'");
  return value;
}

double parse_double(std::string_view text, std::string_view what) {
  const std::string t(trim(text));
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(t, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (t.empty() || used != t.size())
    fail(ErrorKind::config, std::string(what) + ": expected a number, got '" + std::string(text) + "'");
  return value;
}

KeyValueFile KeyValueFile::parse(std::string_view text, const std::string& source_name) {
  KeyValueFile out;
  out.source_ = source_name;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source_name + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) fail(ErrorKind::config, where + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) fail(ErrorKind::config, where + ": empty key");
    if (!out.entries_.emplace(key, value).second)
      fail(ErrorKind::config, where + ": duplicate key '" + key + "'");
  }
  return out;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::config, "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

bool KeyValueFile::contains(std::string_view key) const { return entries_.find(key) != entries_.end(); }

std::optional<std::string> KeyValueFile::get(std::string_view key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  consumed_.insert(it->first);
  return it->second;
}

std::string KeyValueFile::require(std::string_view key) const {
  auto v = get(key);
  if (!v) fail(ErrorKind::config, "missing required key '" + std::string(key) + "' in " + source_);
  return *v;
}

std::int64_t KeyValueFile::get_int(std::string_view key, std::int64_t fallback) const {
  const auto v = get(key);
  return v ? parse_int(*v, key) : fallback;
}

std::int64_t KeyValueFile::require_int(std::string_view key) const { return parse_int(require(key), key); }

double KeyValueFile::get_double(std::string_view key, double fallback) const {
  const auto v = get(key);
  return v ? parse_double(*v, key) : fallback;
}

std::string KeyValueFile::get_string(std::string_view key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

void KeyValueFile::set(const std::string& key, const std::string& value) { entries_[key] = value; }

void KeyValueFile::reject_unknown() const {
  std::string unknown;
  for (const auto& [key, value] : entries_) {
    if (consumed_.count(key)) continue;
    if (!unknown.empty()) unknown += ", ";
    unknown += key;
  }
  if (!unknown.empty()) fail(ErrorKind::config, "unknown key(s) in " + source_ + ": " + unknown);
}

std::string KeyValueFile::canonical_text() const {
  std::string out;
  for (const auto& [key, value] : entries_) out += key + "=" + value + "\n";
  return out;
}

}  // namespace dualad
