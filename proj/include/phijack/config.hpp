#pragma once

#include <optional>
#include <string>
#include <vector>

#include "phijack/common.hpp"

namespace phijack {

// Flat key-value run configuration: `key = value` lines, '#' comments.
// Serialization is canonical (`key = value\n` in insertion order), so
// parse-then-serialize is byte-stable.
class Config {
public:
  static Config parse(const std::string& text);
  static Config parse_file(const std::string& path);

  std::string serialize() const;
  void save(const std::string& path) const;

  bool has(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  // Hard-errors on any key outside the documented set; typos in ablation
  // sweeps must not pass silently.
  void require_known_keys(const std::vector<std::string>& known) const;

private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

// comma-separated doubles ("0.1,0.2,0.5")
std::vector<double> parse_double_list(const std::string& text);
std::vector<int> parse_int_list(const std::string& text);

}  // namespace phijack
