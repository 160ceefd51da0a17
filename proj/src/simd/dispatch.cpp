#include "phonotrack/simd.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace phonotrack::simd {

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "unknown";
}

bool available(Backend b) {
  switch (b) {
    case Backend::scalar: return true;
    case Backend::avx2:
#if defined(PHONOTRACK_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Backend::neon:
#if defined(PHONOTRACK_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Backend detect() {
  if (const char* env = std::getenv("PHONOTRACK_SIMD")) {
    const std::string want(env);
    for (Backend b : {Backend::scalar, Backend::avx2, Backend::neon})
      if (want == backend_name(b) && available(b)) return b;
  }
  if (available(Backend::avx2)) return Backend::avx2;
  if (available(Backend::neon)) return Backend::neon;
  return Backend::scalar;
}

const KernelTable& table(Backend b) {
  if (!available(b)) throw std::invalid_argument("SIMD backend not available: " + std::string(backend_name(b)));
  switch (b) {
#if defined(PHONOTRACK_HAVE_AVX2)
    case Backend::avx2: return detail::avx2_table();
#endif
#if defined(PHONOTRACK_HAVE_NEON)
    case Backend::neon: return detail::neon_table();
#endif
    default: return detail::scalar_table();
  }
}

namespace {
std::atomic<const KernelTable*> g_active{nullptr};
}

const KernelTable& active() {
  const KernelTable* t = g_active.load(std::memory_order_acquire);
  if (t == nullptr) {
    t = &table(detect());
    g_active.store(t, std::memory_order_release);
  }
  return *t;
}

void select(Backend b) { g_active.store(&table(b), std::memory_order_release); }

}  // namespace phonotrack::simd
