// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

// Dense double-precision kernels behind every tensor contraction and
// training loop in this library. Each kernel has a scalar reference
// implementation and an AVX2/FMA variant; the active set is chosen once at
// runtime (CPU probe, overridable with TENSLORA_KERNELS=scalar|avx2).
//
// Accumulation-order contract: gemm_nn/gemm_tn accumulate each output
// element strictly in ascending-p order in both backends, so those two are
// bit-identical across backends. dot/gemm_nt use multiple SIMD accumulators
// and agree only up to rounding.
namespace tenslora::kernels {

enum class Backend { scalar, avx2 };

Backend active_backend();
const char* backend_name();

/// Force a backend (mainly for tests). Returns false if the CPU cannot run it.
bool set_backend(Backend b);

double dot(const double* x, const double* y, std::size_t n);

/// y += a * x
void axpy(double a, const double* x, double* y, std::size_t n);
/// out = a * x (x == out allowed)
void scale(const double* x, double a, double* out, std::size_t n);
void add(const double* x, const double* y, double* out, std::size_t n);
void sub(const double* x, const double* y, double* out, std::size_t n);
void hadamard(const double* x, const double* y, double* out, std::size_t n);

// Row-major GEMMs, c is m x n. accumulate=false overwrites c.
// a: m x k, b: k x n
void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
// a: m x k, b: n x k  =>  c = a * b^T
void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
// a: k x m, b: k x n  =>  c = a^T * b
void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

}  // namespace tenslora::kernels
