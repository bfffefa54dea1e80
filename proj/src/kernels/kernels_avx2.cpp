// SPDX-License-Identifier: Apache-2.0
// AVX2/FMA kernel variants. This TU is compiled with -mavx2 -mfma; nothing
// here runs unless the CPU probe in avx2_vtable() passes.
#include <cmath>
#include <cstddef>

#include "kernels_common.hpp"

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>

namespace tenslora::kernels::detail {
namespace {

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  const __m256d acc = _mm256_add_pd(acc0, acc1);
  const __m128d lo = _mm256_castpd256_pd128(acc);
  const __m128d hi = _mm256_extractf128_pd(acc, 1);
  const __m128d pair = _mm_add_pd(lo, hi);
  double sum = _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
  for (; i < n; ++i) sum = std::fma(x[i], y[i], sum);
  return sum;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void scale_avx2(const double* x, double a, double* out, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) out[i] = a * x[i];
}

void add_avx2(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i,
                     _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void sub_avx2(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i,
                     _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] - y[i];
}

void hadamard_avx2(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i,
                     _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

// c row += ap * b row, vectorized over columns. The per-element accumulation
// order over p matches the scalar kernel, keeping nn/tn bit-identical.
inline void row_fma(double ap, const double* brow, double* crow, std::size_t n) {
  const __m256d va = _mm256_set1_pd(ap);
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    _mm256_storeu_pd(crow + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j),
                                               _mm256_loadu_pd(crow + j)));
    _mm256_storeu_pd(crow + j + 4, _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j + 4),
                                                   _mm256_loadu_pd(crow + j + 4)));
  }
  for (; j + 4 <= n; j += 4) {
    _mm256_storeu_pd(crow + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j),
                                               _mm256_loadu_pd(crow + j)));
  }
  for (; j < n; ++j) crow[j] = std::fma(ap, brow[j], crow[j]);
}

void gemm_nn_avx2(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) {
      const __m256d z = _mm256_setzero_pd();
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) _mm256_storeu_pd(crow + j, z);
      for (; j < n; ++j) crow[j] = 0.0;
    }
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) row_fma(arow[p], b + p * n, crow, n);
  }
}

void gemm_nt_avx2(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double s = dot_avx2(arow, b + j * k, k);
      crow[j] = accumulate ? crow[j] + s : s;
    }
  }
}

void gemm_tn_avx2(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) {
      const __m256d z = _mm256_setzero_pd();
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) _mm256_storeu_pd(crow + j, z);
      for (; j < n; ++j) crow[j] = 0.0;
    }
    for (std::size_t p = 0; p < k; ++p) row_fma(a[p * m + i], b + p * n, crow, n);
  }
}

constexpr Vtable kAvx2 = {dot_avx2,  axpy_avx2,    scale_avx2,   add_avx2,    sub_avx2,
                          hadamard_avx2, gemm_nn_avx2, gemm_nt_avx2, gemm_tn_avx2, "avx2"};

}  // namespace

const Vtable* avx2_vtable() {
  static const bool ok =
      __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok ? &kAvx2 : nullptr;
}

}  // namespace tenslora::kernels::detail

#else  // non-x86 build of this TU

namespace tenslora::kernels::detail {
const Vtable* avx2_vtable() { return nullptr; }
}  // namespace tenslora::kernels::detail

#endif
