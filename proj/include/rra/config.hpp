#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace rra {

// Line-oriented `section.key = value` text. '#' starts a comment; blank lines
// are ignored; duplicate keys are rejected. All lookups name the offending key
// in their ValidationError message.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, const std::string& source = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  bool has_section(std::string_view section) const;
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  const std::string& raw(const std::string& key) const;
  std::string get_string(const std::string& key) const { return raw(key); }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_list(const std::string& key) const;

  std::vector<std::string> keys() const;
  // Throws on the first key (in sorted order) outside `allowed`.
  void reject_unknown(const std::set<std::string>& allowed) const;

 private:
  std::map<std::string, std::string> values_;
  std::string source_;
};

double parse_double(std::string_view text, std::string_view what);

}  // namespace rra
