#include <cstdlib>
#include <string>

#include "phijack/kernels.hpp"

namespace phijack::kern {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Ops* pick_default() {
  const Ops* avx2 = avx2_ops_or_null();
  if (avx2 != nullptr && cpu_has_avx2()) return avx2;
  return &scalar_ops();
}

const Ops* pick_from_env() {
  const char* env = std::getenv("PHIJACK_SIMD");
  if (env != nullptr) {
    std::string want(env);
    if (want == "scalar") return &scalar_ops();
    if (want == "avx2") {
      const Ops* avx2 = avx2_ops_or_null();
      if (avx2 != nullptr && cpu_has_avx2()) return avx2;
      // requested backend unavailable: fall through to default
    }
  }
  return pick_default();
}

const Ops*& active_slot() {
  static const Ops* active = pick_from_env();
  return active;
}

}  // namespace

const Ops& ops() { return *active_slot(); }

bool force_backend(const std::string& name) {
  if (name == "auto") {
    active_slot() = pick_default();
    return true;
  }
  if (name == "scalar") {
    active_slot() = &scalar_ops();
    return true;
  }
  if (name == "avx2") {
    const Ops* avx2 = avx2_ops_or_null();
    if (avx2 == nullptr || !cpu_has_avx2()) return false;
    active_slot() = avx2;
    return true;
  }
  return false;
}

std::string active_backend() { return ops().name; }

}  // namespace phijack::kern
