// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "tenslora/kernels.hpp"
#include "tenslora/rng.hpp"

namespace k = tenslora::kernels;
using tenslora::Rng;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::vector<double> v(n);
  Rng rng(seed);
  for (double& x : v) x = rng.normal();
  return v;
}

// Independent oracle: plain triple loop, no fma, no vectorization.
std::vector<double> naive_gemm(const std::vector<double>& a, const std::vector<double>& b,
                               std::size_t m, std::size_t kk, std::size_t n, char mode) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < kk; ++p) {
        double av = mode == 't' ? a[p * m + i] : a[i * kk + p];
        double bv = mode == 'n' || mode == 't' ? b[p * n + j] : b[j * kk + p];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
  return c;
}

double rel_diff(const std::vector<double>& x, const std::vector<double>& y) {
  double num = 0.0, den = 1e-300;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num = std::max(num, std::abs(x[i] - y[i]));
    den = std::max(den, std::abs(y[i]));
  }
  return num / den;
}

struct BackendGuard {
  k::Backend saved = k::active_backend();
  ~BackendGuard() { k::set_backend(saved); }
};

const std::vector<std::array<std::size_t, 3>> kGemmShapes = {
    {1, 1, 1}, {2, 3, 4}, {5, 7, 1}, {1, 9, 6}, {8, 8, 8},
    {13, 5, 17}, {16, 32, 16}, {33, 19, 41}, {64, 48, 37}};

}  // namespace

TEST_CASE("gemm variants match the naive oracle on both backends") {
  BackendGuard guard;
  for (k::Backend backend : {k::Backend::scalar, k::Backend::avx2}) {
    if (!k::set_backend(backend)) continue;
    for (const auto& [m, kk, n] : kGemmShapes) {
      const auto a = random_vec(m * kk, 11 * m + n);
      const auto b = random_vec(kk * n, 7 * kk + 3);
      std::vector<double> c(m * n);

      k::gemm_nn(a.data(), b.data(), c.data(), m, kk, n);
      CHECK(rel_diff(c, naive_gemm(a, b, m, kk, n, 'n')) < 1e-13);

      const auto bt = random_vec(n * kk, 5 * n + 1);
      k::gemm_nt(a.data(), bt.data(), c.data(), m, kk, n);
      CHECK(rel_diff(c, naive_gemm(a, bt, m, kk, n, 'x')) < 1e-13);

      const auto at = random_vec(kk * m, 13 * m + 7);
      k::gemm_tn(at.data(), b.data(), c.data(), m, kk, n);
      CHECK(rel_diff(c, naive_gemm(at, b, m, kk, n, 't')) < 1e-13);
    }
  }
}

TEST_CASE("gemm accumulate flag adds onto the destination") {
  const std::size_t m = 6, kk = 5, n = 7;
  const auto a = random_vec(m * kk, 1);
  const auto b = random_vec(kk * n, 2);
  std::vector<double> c0(m * n), c1(m * n, 0.5);
  k::gemm_nn(a.data(), b.data(), c0.data(), m, kk, n);
  k::gemm_nn(a.data(), b.data(), c1.data(), m, kk, n, /*accumulate=*/true);
  for (std::size_t i = 0; i < c0.size(); ++i)
    CHECK(c1[i] == doctest::Approx(c0[i] + 0.5).epsilon(1e-14));
}

TEST_CASE("scalar and avx2 backends agree") {
  BackendGuard guard;
  if (!k::set_backend(k::Backend::avx2)) {
    MESSAGE("avx2 backend unavailable on this machine; equivalence skipped");
    return;
  }
  for (const auto& [m, kk, n] : kGemmShapes) {
    const auto a = random_vec(m * kk, m + 100 * n);
    const auto b = random_vec(kk * n, kk + 17);
    const auto bt = random_vec(n * kk, kk + 31);
    const auto at = random_vec(kk * m, kk + 43);
    const auto x = random_vec(m * n, 3);
    const auto y = random_vec(m * n, 4);

    REQUIRE(k::set_backend(k::Backend::scalar));
    std::vector<double> nn_s(m * n), nt_s(m * n), tn_s(m * n), ax_s = y, sc_s(m * n),
        ad_s(m * n), hm_s(m * n);
    k::gemm_nn(a.data(), b.data(), nn_s.data(), m, kk, n);
    k::gemm_nt(a.data(), bt.data(), nt_s.data(), m, kk, n);
    k::gemm_tn(at.data(), b.data(), tn_s.data(), m, kk, n);
    k::axpy(1.75, x.data(), ax_s.data(), x.size());
    k::scale(x.data(), -0.3, sc_s.data(), x.size());
    k::add(x.data(), y.data(), ad_s.data(), x.size());
    k::hadamard(x.data(), y.data(), hm_s.data(), x.size());
    const double dot_s = k::dot(x.data(), y.data(), x.size());

    REQUIRE(k::set_backend(k::Backend::avx2));
    std::vector<double> nn_v(m * n), nt_v(m * n), tn_v(m * n), ax_v = y, sc_v(m * n),
        ad_v(m * n), hm_v(m * n);
    k::gemm_nn(a.data(), b.data(), nn_v.data(), m, kk, n);
    k::gemm_nt(a.data(), bt.data(), nt_v.data(), m, kk, n);
    k::gemm_tn(at.data(), b.data(), tn_v.data(), m, kk, n);
    k::axpy(1.75, x.data(), ax_v.data(), x.size());
    k::scale(x.data(), -0.3, sc_v.data(), x.size());
    k::add(x.data(), y.data(), ad_v.data(), x.size());
    k::hadamard(x.data(), y.data(), hm_v.data(), x.size());
    const double dot_v = k::dot(x.data(), y.data(), x.size());

    // nn/tn and the elementwise kernels share the exact per-element fma
    // order across backends, so they must be bit-identical.
    CHECK(nn_s == nn_v);
    CHECK(tn_s == tn_v);
    CHECK(ax_s == ax_v);
    CHECK(sc_s == sc_v);
    CHECK(ad_s == ad_v);
    CHECK(hm_s == hm_v);
    // nt/dot reduce with multiple accumulators; rounding-level agreement.
    CHECK(rel_diff(nt_s, nt_v) < 1e-13);
    CHECK(dot_s == doctest::Approx(dot_v).epsilon(1e-13));
  }
}

TEST_CASE("backend selection reports a name and can be forced to scalar") {
  BackendGuard guard;
  REQUIRE(k::set_backend(k::Backend::scalar));
  CHECK(std::string(k::backend_name()) == "scalar");
  CHECK(k::active_backend() == k::Backend::scalar);
}

TEST_CASE("large gemm exercises the parallel row split") {
  // 160x128x96 is above the serial threshold; verify against the oracle.
  const std::size_t m = 160, kk = 128, n = 96;
  const auto a = random_vec(m * kk, 55);
  const auto b = random_vec(kk * n, 66);
  std::vector<double> c(m * n);
  k::gemm_nn(a.data(), b.data(), c.data(), m, kk, n);
  CHECK(rel_diff(c, naive_gemm(a, b, m, kk, n, 'n')) < 1e-12);
}
