// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

// Internal kernel vtable shared by the scalar and AVX2 translation units.
namespace tenslora::kernels::detail {

struct Vtable {
  double (*dot)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*scale)(const double*, double, double*, std::size_t);
  void (*add)(const double*, const double*, double*, std::size_t);
  void (*sub)(const double*, const double*, double*, std::size_t);
  void (*hadamard)(const double*, const double*, double*, std::size_t);
  void (*gemm_nn)(const double*, const double*, double*, std::size_t, std::size_t,
                  std::size_t, bool);
  void (*gemm_nt)(const double*, const double*, double*, std::size_t, std::size_t,
                  std::size_t, bool);
  void (*gemm_tn)(const double*, const double*, double*, std::size_t, std::size_t,
                  std::size_t, bool);
  const char* name;
};

const Vtable* scalar_vtable();
// Returns nullptr when the AVX2 TU was not built or the CPU lacks AVX2+FMA.
const Vtable* avx2_vtable();

}  // namespace tenslora::kernels::detail
