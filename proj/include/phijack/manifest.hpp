#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace phijack {

// FNV-1a over the raw file bytes.
uint64_t file_checksum(const std::string& path);
uint64_t bytes_checksum(const void* data, size_t len);
std::string checksum_hex(uint64_t checksum);

// Run manifest: ordered key/value lines plus an artifact table with
// checksums. Every file a run emits is listed here; `evaluate` verifies
// listed inputs before touching them.
class Manifest {
public:
  void set(const std::string& key, const std::string& value);
  std::optional<std::string> get(const std::string& key) const;

  // records <name> -> checksum(path)
  void add_artifact(const std::string& name, const std::string& path);
  // throws an integrity error when the file no longer matches
  void verify_artifact(const std::string& name, const std::string& path) const;
  bool has_artifact(const std::string& name) const;

  void save(const std::string& path) const;
  static Manifest load(const std::string& path);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  const std::vector<std::pair<std::string, std::string>>& artifacts() const { return artifacts_; }

private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::vector<std::pair<std::string, std::string>> artifacts_;  // name -> checksum hex
};

}  // namespace phijack
