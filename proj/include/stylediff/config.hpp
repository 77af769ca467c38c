#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace stylediff {

/// Flat "key = value" settings. Lines starting with '#' are comments.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  /// Later entries win.
  void merge(const Config& other);

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  /// Canonical text form: sorted "key = value" lines.
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace stylediff
