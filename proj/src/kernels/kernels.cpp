// SPDX-License-Identifier: Apache-2.0
#include "tenslora/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <string>

#include "kernels_common.hpp"
#include "tenslora/parallel.hpp"

namespace tenslora::kernels {
namespace detail {
namespace {

// Reference kernels. gemm_nn/gemm_tn accumulate each c element in ascending-p
// order with fma, matching the AVX2 lanes element-for-element.

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc = std::fma(x[i], y[i], acc);
  return acc;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void scale_scalar(const double* x, double a, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i];
}

void add_scalar(const double* x, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

void sub_scalar(const double* x, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
}

void hadamard_scalar(const double* x, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void gemm_nn_scalar(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double ap = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] = std::fma(ap, brow[j], crow[j]);
    }
  }
}

void gemm_nt_scalar(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double s = dot_scalar(arow, b + j * k, k);
      crow[j] = accumulate ? crow[j] + s : s;
    }
  }
}

void gemm_tn_scalar(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double ap = a[p * m + i];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] = std::fma(ap, brow[j], crow[j]);
    }
  }
}

constexpr Vtable kScalar = {
    dot_scalar, axpy_scalar,    scale_scalar,   add_scalar,     sub_scalar,
    hadamard_scalar, gemm_nn_scalar, gemm_nt_scalar, gemm_tn_scalar, "scalar"};

}  // namespace

const Vtable* scalar_vtable() { return &kScalar; }

#if !defined(TENSLORA_HAVE_AVX2_TU)
const Vtable* avx2_vtable() { return nullptr; }
#endif

}  // namespace detail

namespace {

using detail::Vtable;

const Vtable* pick_default() {
  const Vtable* avx2 = detail::avx2_vtable();
  if (const char* env = std::getenv("TENSLORA_KERNELS")) {
    const std::string want(env);
    if (want == "scalar") return detail::scalar_vtable();
    if (want == "avx2" && avx2) return avx2;
  }
  return avx2 ? avx2 : detail::scalar_vtable();
}

std::atomic<const Vtable*>& active_slot() {
  static std::atomic<const Vtable*> slot{pick_default()};
  return slot;
}

const Vtable* active() { return active_slot().load(std::memory_order_relaxed); }

// Row split threshold: below this many multiply-adds a gemm stays serial.
constexpr std::size_t kParallelMacs = 1u << 19;

}  // namespace

Backend active_backend() {
  return active() == detail::scalar_vtable() ? Backend::scalar : Backend::avx2;
}

const char* backend_name() { return active()->name; }

bool set_backend(Backend b) {
  const Vtable* vt =
      b == Backend::scalar ? detail::scalar_vtable() : detail::avx2_vtable();
  if (!vt) return false;
  active_slot().store(vt, std::memory_order_relaxed);
  return true;
}

double dot(const double* x, const double* y, std::size_t n) {
  return active()->dot(x, y, n);
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  active()->axpy(a, x, y, n);
}

void scale(const double* x, double a, double* out, std::size_t n) {
  active()->scale(x, a, out, n);
}

void add(const double* x, const double* y, double* out, std::size_t n) {
  active()->add(x, y, out, n);
}

void sub(const double* x, const double* y, double* out, std::size_t n) {
  active()->sub(x, y, out, n);
}

void hadamard(const double* x, const double* y, double* out, std::size_t n) {
  active()->hadamard(x, y, out, n);
}

void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  const Vtable* vt = active();
  if (m * k * n >= kParallelMacs && m >= 2) {
    const std::size_t min_rows = std::max<std::size_t>(1, kParallelMacs / (2 * k * n + 1));
    parallel_for_chunks(0, m, min_rows, [&](std::size_t r0, std::size_t r1) {
      vt->gemm_nn(a + r0 * k, b, c + r0 * n, r1 - r0, k, n, accumulate);
    });
    return;
  }
  vt->gemm_nn(a, b, c, m, k, n, accumulate);
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  const Vtable* vt = active();
  if (m * k * n >= kParallelMacs && m >= 2) {
    const std::size_t min_rows = std::max<std::size_t>(1, kParallelMacs / (2 * k * n + 1));
    parallel_for_chunks(0, m, min_rows, [&](std::size_t r0, std::size_t r1) {
      vt->gemm_nt(a + r0 * k, b, c + r0 * n, r1 - r0, k, n, accumulate);
    });
    return;
  }
  vt->gemm_nt(a, b, c, m, k, n, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  active()->gemm_tn(a, b, c, m, k, n, accumulate);
}

}  // namespace tenslora::kernels
