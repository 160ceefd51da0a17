#pragma once

#include <cstddef>
#include <span>
#include <string_view>

// Inner-loop kernels with a scalar reference implementation and vectorized
// variants selected at runtime. Every hot loop in the library (Gram matrices,
// convolutions, LSTM gate products) is expressed through dot and axpy so the
// backends stay small and can be checked against the scalar reference.

namespace phonotrack::simd {

enum class Backend { scalar, avx2, neon };

struct KernelTable {
  Backend backend;
  float (*dot_f32)(const float* a, const float* b, std::size_t n);
  double (*dot_f64)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy_f32)(float alpha, const float* x, float* y, std::size_t n);
  void (*axpy_f64)(double alpha, const double* x, double* y, std::size_t n);
};

std::string_view backend_name(Backend b);

// True if the backend was compiled in and the running CPU supports it.
bool available(Backend b);

// Best available backend; honours PHONOTRACK_SIMD=scalar|avx2|neon.
Backend detect();

// Kernel table for a specific backend. Throws std::invalid_argument if the
// backend is not available.
const KernelTable& table(Backend b);

// Currently active table. Selected on first use via detect().
const KernelTable& active();

// Switches the active backend. Not safe to call while other threads run kernels.
void select(Backend b);

inline float dot(const float* a, const float* b, std::size_t n) { return active().dot_f32(a, b, n); }
inline double dot(const double* a, const double* b, std::size_t n) { return active().dot_f64(a, b, n); }
inline void axpy(float alpha, const float* x, float* y, std::size_t n) { active().axpy_f32(alpha, x, y, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy_f64(alpha, x, y, n); }

template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
  return dot(a.data(), b.data(), a.size() < b.size() ? a.size() : b.size());
}

namespace detail {
const KernelTable& scalar_table();
#if defined(PHONOTRACK_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
#if defined(PHONOTRACK_HAVE_NEON)
const KernelTable& neon_table();
#endif
}  // namespace detail

}  // namespace phonotrack::simd
