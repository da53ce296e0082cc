#include <cstdlib>
#include <cstring>

#include "realtalk/kernels.hpp"

namespace rt::kern {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

bool avx2_compiled() { return avx2_ops().name != scalar_ops().name; }

Isa detect() {
  if (const char* env = std::getenv("REALTALK_SIMD")) {
    if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
    if (std::strcmp(env, "avx2") == 0 && avx2_available()) return Isa::avx2;
    // "auto" or anything else falls through to detection
  }
  return avx2_available() ? Isa::avx2 : Isa::scalar;
}

Isa g_isa = detect();

}  // namespace

bool avx2_available() { return cpu_has_avx2() && avx2_compiled(); }

const Ops& ops() {
  return g_isa == Isa::avx2 ? avx2_ops() : scalar_ops();
}

Isa active_isa() { return g_isa; }

void force_isa(Isa isa) {
  g_isa = (isa == Isa::avx2 && avx2_available()) ? Isa::avx2 : Isa::scalar;
}

void reset_isa() { g_isa = detect(); }

}  // namespace rt::kern
