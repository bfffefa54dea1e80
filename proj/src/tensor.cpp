// SPDX-License-Identifier: Apache-2.0
#include "tenslora/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "tenslora/kernels.hpp"
#include "tenslora/rng.hpp"

namespace tenslora {

namespace {

std::size_t checked_numel(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor: order must be >= 1");
  std::size_t n = 1;
  for (std::size_t s : shape) {
    if (s == 0) throw std::invalid_argument("tensor: mode sizes must be >= 1");
    n *= s;
  }
  return n;
}

// Splits a shape around `mode` into (prefix count, mode size, suffix count).
struct ModeSplit {
  std::size_t pre = 1, len = 1, post = 1;
};

ModeSplit split_at(const std::vector<std::size_t>& shape, std::size_t mode) {
  if (mode >= shape.size()) throw std::invalid_argument("tensor: mode out of range");
  ModeSplit s;
  for (std::size_t d = 0; d < mode; ++d) s.pre *= shape[d];
  s.len = shape[mode];
  for (std::size_t d = mode + 1; d < shape.size(); ++d) s.post *= shape[d];
  return s;
}

Eigen::MatrixXd to_eigen(const Tensor& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j);
  return out;
}

Tensor from_eigen(const Eigen::MatrixXd& m) {
  Tensor out({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = m(i, j);
  return out;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_numel(shape_) != data_.size())
    throw std::invalid_argument("tensor: data length does not match shape");
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

std::size_t Tensor::dim(std::size_t mode) const {
  if (mode >= shape_.size()) throw std::invalid_argument("tensor: mode out of range");
  return shape_[mode];
}

std::size_t Tensor::rows() const {
  if (order() != 2) throw std::invalid_argument("tensor: rows() needs order 2");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (order() != 2) throw std::invalid_argument("tensor: cols() needs order 2");
  return shape_[1];
}

std::size_t Tensor::flat_index(std::span<const std::size_t> indices) const {
  if (indices.size() != shape_.size())
    throw std::invalid_argument("tensor: index arity mismatch");
  std::size_t flat = 0;
  for (std::size_t d = 0; d < shape_.size(); ++d) {
    if (indices[d] >= shape_[d]) throw std::invalid_argument("tensor: index out of range");
    flat = flat * shape_[d] + indices[d];
  }
  return flat;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (checked_numel(shape) != data_.size())
    throw std::invalid_argument("tensor: reshape changes element count");
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

std::string shape_to_string(std::span<const std::size_t> shape) {
  std::string s = "(";
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (d) s += ",";
    s += std::to_string(shape[d]);
  }
  return s + ")";
}

void TuckerFactors::validate() const {
  if (core.empty()) throw std::invalid_argument("tucker: empty core");
  if (core.order() != factors.size())
    throw std::invalid_argument("tucker: core order != factor count");
  for (std::size_t i = 0; i < factors.size(); ++i) {
    if (factors[i].order() != 2)
      throw std::invalid_argument("tucker: factor " + std::to_string(i) + " not a matrix");
    if (factors[i].cols() != core.dim(i))
      throw std::invalid_argument("tucker: factor " + std::to_string(i) +
                                  " column count != core mode size");
  }
}

std::vector<std::size_t> TuckerFactors::full_shape() const {
  validate();
  std::vector<std::size_t> s(factors.size());
  for (std::size_t i = 0; i < factors.size(); ++i) s[i] = factors[i].rows();
  return s;
}

Tensor mode_unfold(const Tensor& t, std::size_t mode) {
  const ModeSplit s = split_at(t.shape(), mode);
  Tensor out({s.len, s.pre * s.post});
  const double* src = t.raw();
  double* dst = out.raw();
  // For fixed (p, q) the remaining fastest index r is contiguous on both
  // sides, so unfolding is pre*len block copies of length post.
  for (std::size_t p = 0; p < s.pre; ++p) {
    for (std::size_t q = 0; q < s.len; ++q) {
      std::memcpy(dst + (q * s.pre + p) * s.post, src + (p * s.len + q) * s.post,
                  s.post * sizeof(double));
    }
  }
  return out;
}

Tensor mode_refold(const Tensor& unfolded, std::size_t mode,
                   const std::vector<std::size_t>& shape) {
  checked_numel(shape);
  const ModeSplit s = split_at(shape, mode);
  if (unfolded.order() != 2 || unfolded.rows() != s.len ||
      unfolded.cols() != s.pre * s.post)
    throw std::invalid_argument("refold: matrix shape does not match target");
  Tensor out(shape);
  const double* src = unfolded.raw();
  double* dst = out.raw();
  for (std::size_t p = 0; p < s.pre; ++p) {
    for (std::size_t q = 0; q < s.len; ++q) {
      std::memcpy(dst + (p * s.len + q) * s.post, src + (q * s.pre + p) * s.post,
                  s.post * sizeof(double));
    }
  }
  return out;
}

Tensor mode_product(const Tensor& t, const Tensor& m, std::size_t mode) {
  if (m.order() != 2) throw std::invalid_argument("mode_product: m must be a matrix");
  const ModeSplit s = split_at(t.shape(), mode);
  if (m.cols() != s.len)
    throw std::invalid_argument("mode_product: matrix columns (" +
                                std::to_string(m.cols()) + ") != mode size (" +
                                std::to_string(s.len) + ")");
  const std::size_t k = m.rows();
  std::vector<std::size_t> out_shape = t.shape();
  out_shape[mode] = k;
  Tensor out(out_shape);
  // Each prefix block of t is a contiguous (len x post) matrix; the product
  // replaces it with the contiguous (k x post) block m * block.
  for (std::size_t p = 0; p < s.pre; ++p) {
    kernels::gemm_nn(m.raw(), t.raw() + p * s.len * s.post, out.raw() + p * k * s.post,
                     k, s.len, s.post);
  }
  return out;
}

Tensor tucker_reconstruct(const TuckerFactors& f) {
  f.validate();
  Tensor x = f.core;
  for (std::size_t mode = 0; mode < f.factors.size(); ++mode)
    x = mode_product(x, f.factors[mode], mode);
  return x;
}

Tensor tucker_slice(const TuckerFactors& f,
                    const std::map<std::size_t, std::size_t>& fixed) {
  f.validate();
  const std::size_t order = f.factors.size();
  for (const auto& [mode, coord] : fixed) {
    if (mode >= order) throw std::invalid_argument("tucker_slice: mode out of range");
    if (coord >= f.factors[mode].rows())
      throw std::invalid_argument("tucker_slice: coordinate out of range");
  }
  Tensor x = f.core;
  // Fixed modes first: each contraction with a single factor row collapses
  // that mode to size 1 before any free mode is expanded.
  for (const auto& [mode, coord] : fixed) {
    const Tensor& fac = f.factors[mode];
    Tensor row({1, fac.cols()});
    for (std::size_t j = 0; j < fac.cols(); ++j) row(0, j) = fac(coord, j);
    x = mode_product(x, row, mode);
  }
  for (std::size_t mode = 0; mode < order; ++mode) {
    if (!fixed.contains(mode)) x = mode_product(x, f.factors[mode], mode);
  }
  // Dropping size-1 modes keeps row-major enumeration intact.
  std::vector<std::size_t> out_shape;
  for (std::size_t mode = 0; mode < order; ++mode)
    if (!fixed.contains(mode)) out_shape.push_back(x.dim(mode));
  if (out_shape.empty()) out_shape.push_back(1);
  return x.reshaped(std::move(out_shape));
}

Tensor orthonormal_init(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  if (rows == 0 || cols == 0)
    throw std::invalid_argument("orthonormal_init: sizes must be >= 1");
  if (rows < cols) return transpose(orthonormal_init(cols, rows, seed));
  Rng rng(seed);
  Eigen::MatrixXd g(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(
                                              static_cast<Eigen::Index>(rows),
                                              static_cast<Eigen::Index>(cols));
  const Eigen::MatrixXd r = qr.matrixQR().topRows(static_cast<Eigen::Index>(cols));
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(cols); ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return from_eigen(q);
}

TuckerFactors hosvd(const Tensor& t, const std::vector<std::size_t>& ranks) {
  if (ranks.size() != t.order())
    throw std::invalid_argument("hosvd: ranks arity != tensor order");
  for (std::size_t mode = 0; mode < ranks.size(); ++mode) {
    if (ranks[mode] == 0 || ranks[mode] > t.dim(mode))
      throw std::invalid_argument("hosvd: rank for mode " + std::to_string(mode) +
                                  " exceeds mode dimension");
  }
  TuckerFactors out;
  out.factors.resize(t.order());
  for (std::size_t mode = 0; mode < t.order(); ++mode) {
    const Eigen::MatrixXd unf = to_eigen(mode_unfold(t, mode));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(unf, Eigen::ComputeThinU);
    Eigen::MatrixXd u = svd.matrixU().leftCols(static_cast<Eigen::Index>(ranks[mode]));
    // Sign convention: largest-magnitude entry of each singular vector is
    // positive, making repeated factorizations reproducible.
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
      Eigen::Index imax = 0;
      u.col(j).cwiseAbs().maxCoeff(&imax);
      if (u(imax, j) < 0.0) u.col(j) = -u.col(j);
    }
    out.factors[mode] = from_eigen(u);
  }
  Tensor core = t;
  for (std::size_t mode = 0; mode < t.order(); ++mode)
    core = mode_product(core, transpose(out.factors[mode]), mode);
  out.core = std::move(core);
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.order() != 2 || b.order() != 2)
    throw std::invalid_argument("matmul: both operands must be matrices");
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions disagree (" +
                                shape_to_string(a.shape()) + " * " +
                                shape_to_string(b.shape()) + ")");
  Tensor c({a.rows(), b.cols()});
  kernels::gemm_nn(a.raw(), b.raw(), c.raw(), a.rows(), a.cols(), b.cols());
  return c;
}

Tensor transpose(const Tensor& m) {
  if (m.order() != 2) throw std::invalid_argument("transpose: operand must be a matrix");
  Tensor out({m.cols(), m.rows()});
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

Tensor random_normal(std::vector<std::size_t> shape, std::uint64_t seed, double stddev) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

double frobenius_norm(const Tensor& t) {
  return std::sqrt(kernels::dot(t.raw(), t.raw(), t.numel()));
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("max_abs_diff: shape mismatch " +
                                shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace tenslora
