#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

namespace trace {

// Flat `key = value` configuration with `#` comments. Keys are namespaced by
// convention ("synth.patients", "train.lr", "model.d_model"). Every getter
// marks its key as consumed so typos can be reported afterwards.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& source = "config");
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(std::string_view key) const;

  std::optional<std::string> get(std::string_view key) const;
  std::string get_string(std::string_view key, const std::string& fallback) const;
  double get_double(std::string_view key, double fallback) const;
  std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
  std::uint64_t get_size(std::string_view key, std::uint64_t fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;

  // Throws ConfigError naming every key that no getter asked for.
  void require_all_consumed() const;

  // Sorted `key = value` lines.
  std::string dump() const;
  const std::map<std::string, std::string, std::less<>>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string, std::less<>> entries_;
  mutable std::set<std::string, std::less<>> consumed_;
};

// Shortest text that parses back to the same double.
std::string format_double(double value);

}  // namespace trace
