#include "phijack/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace phijack {

namespace {
std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace

Config Config::parse(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::Usage, "config line " + std::to_string(lineno) + " has no '=': " + line);
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      fail(ErrorKind::Usage, "config line " + std::to_string(lineno) + " has an empty key");
    }
    cfg.set(key, value);
  }
  return cfg;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::Usage, "cannot open config file " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse(buf.str());
}

std::string Config::serialize() const {
  std::ostringstream os;
  for (const auto& e : entries_) os << e.first << " = " << e.second << "\n";
  return os.str();
}

void Config::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
  os << serialize();
}

bool Config::has(const std::string& key) const { return get(key).has_value(); }

std::optional<std::string> Config::get(const std::string& key) const {
  for (const auto& e : entries_) {
    if (e.first == key) return e.second;
  }
  return std::nullopt;
}

void Config::set(const std::string& key, const std::string& value) {
  for (auto& e : entries_) {
    if (e.first == key) {
      e.second = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  auto v = get(key);
  return v.has_value() ? *v : fallback;
}

int Config::get_int(const std::string& key, int fallback) const {
  auto v = get(key);
  if (!v.has_value()) return fallback;
  try {
    size_t pos = 0;
    const int out = std::stoi(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    fail(ErrorKind::Usage, "config key '" + key + "' is not an integer: " + *v);
  }
}

uint64_t Config::get_u64(const std::string& key, uint64_t fallback) const {
  auto v = get(key);
  if (!v.has_value()) return fallback;
  try {
    size_t pos = 0;
    const uint64_t out = std::stoull(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    fail(ErrorKind::Usage, "config key '" + key + "' is not an unsigned integer: " + *v);
  }
}

double Config::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  if (!v.has_value()) return fallback;
  try {
    size_t pos = 0;
    const double out = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    fail(ErrorKind::Usage, "config key '" + key + "' is not a number: " + *v);
  }
}

void Config::require_known_keys(const std::vector<std::string>& known) const {
  for (const auto& e : entries_) {
    if (std::find(known.begin(), known.end(), e.first) == known.end()) {
      fail(ErrorKind::Usage, "unknown config key '" + e.first + "'");
    }
  }
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::istringstream is(text);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      fail(ErrorKind::Usage, "bad numeric list element '" + tok + "'");
    }
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  for (double v : parse_double_list(text)) out.push_back(static_cast<int>(v));
  return out;
}

}  // namespace phijack
