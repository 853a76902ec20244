#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace phijack {

// All randomness in a run derives from one global seed. Sub-streams are
// addressed as (seed, role-tag[, index]) so any component can be reproduced
// in isolation: sub = splitmix64(seed ^ fnv1a64(tag) + index * GOLDEN).
// Changing these constants silently breaks every recorded run, hence the
// golden-value test in test_harness.

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t sub_seed(uint64_t seed, std::string_view role) {
  return splitmix64(seed ^ fnv1a64(role));
}

inline uint64_t sub_seed(uint64_t seed, std::string_view role, uint64_t index) {
  return splitmix64((seed ^ fnv1a64(role)) + index * 0x9e3779b97f4a7c15ull);
}

// mt19937_64 has a standard-specified sequence; the value mappings below are
// ours, so streams are bit-reproducible across platforms and stdlibs.
class RandomStream {
public:
  explicit RandomStream(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // uniform in [0,1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t below(uint64_t n) {
    // modulo bias is < 2^-53 for the n used here (all << 2^32)
    return eng_() % n;
  }

  int range(int lo, int hi_inclusive) {
    return lo + static_cast<int>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
  }

  // Box-Muller; consumes two uniforms per pair, caches the second draw.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace phijack
