#include "phijack/manifest.hpp"

#include <fstream>
#include <sstream>

#include "phijack/common.hpp"
#include "phijack/rng.hpp"

namespace phijack {

uint64_t bytes_checksum(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 1469598103934665603ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t file_checksum(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot open " + path + " for checksum");
  uint64_t h = 1469598103934665603ull;
  char buf[1 << 14];
  while (is) {
    is.read(buf, sizeof(buf));
    const std::streamsize n = is.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string checksum_hex(uint64_t checksum) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(checksum));
  return buf;
}

void Manifest::set(const std::string& key, const std::string& value) {
  for (auto& e : entries_) {
    if (e.first == key) {
      e.second = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

std::optional<std::string> Manifest::get(const std::string& key) const {
  for (const auto& e : entries_) {
    if (e.first == key) return e.second;
  }
  return std::nullopt;
}

void Manifest::add_artifact(const std::string& name, const std::string& path) {
  const std::string sum = checksum_hex(file_checksum(path));
  for (auto& a : artifacts_) {
    if (a.first == name) {
      a.second = sum;
      return;
    }
  }
  artifacts_.emplace_back(name, sum);
}

bool Manifest::has_artifact(const std::string& name) const {
  for (const auto& a : artifacts_) {
    if (a.first == name) return true;
  }
  return false;
}

void Manifest::verify_artifact(const std::string& name, const std::string& path) const {
  for (const auto& a : artifacts_) {
    if (a.first == name) {
      const std::string sum = checksum_hex(file_checksum(path));
      if (sum != a.second) {
        fail(ErrorKind::Integrity, "artifact '" + name + "' checksum mismatch: manifest " +
                                       a.second + ", file " + sum);
      }
      return;
    }
  }
  fail(ErrorKind::Integrity, "artifact '" + name + "' not listed in manifest");
}

void Manifest::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
  for (const auto& e : entries_) os << e.first << " = " << e.second << "\n";
  for (const auto& a : artifacts_) os << "artifact " << a.first << " " << a.second << "\n";
}

Manifest Manifest::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::Io, "cannot open " + path);
  Manifest m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("artifact ", 0) == 0) {
      std::istringstream ls(line.substr(9));
      std::string name, sum;
      ls >> name >> sum;
      m.artifacts_.emplace_back(name, sum);
      continue;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) {
      fail(ErrorKind::Integrity, path + ": malformed manifest line: " + line);
    }
    m.entries_.emplace_back(line.substr(0, eq), line.substr(eq + 3));
  }
  return m;
}

}  // namespace phijack
