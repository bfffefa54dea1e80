// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace tenslora {

/// Dense N-mode array of doubles, row-major with the last mode fastest.
/// Order >= 1 and every mode size >= 1; a default-constructed Tensor is an
/// empty placeholder that must be assigned before use.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor identity(std::size_t n);
  /// Row vector (1 x n).
  static Tensor row(std::vector<double> values);

  std::size_t order() const { return shape_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t dim(std::size_t mode) const;
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Matrix accessors; throw unless order() == 2.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const double* raw() const { return data_.data(); }
  double* raw() { return data_.data(); }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  std::size_t flat_index(std::span<const std::size_t> indices) const;
  double at(std::span<const std::size_t> indices) const { return data_[flat_index(indices)]; }
  double& at(std::span<const std::size_t> indices) { return data_[flat_index(indices)]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  /// Same data, new shape (element count must match).
  Tensor reshaped(std::vector<std::size_t> shape) const;

  void fill(double value);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_to_string(std::span<const std::size_t> shape);

/// Tucker factorization state: core of shape (r_1,...,r_N) plus one factor
/// of shape (dim_i x r_i) per mode. Over-complete factors (r_i > dim_i) are
/// legal.
struct TuckerFactors {
  Tensor core;
  std::vector<Tensor> factors;

  void validate() const;
  std::vector<std::size_t> full_shape() const;
};

// --- multilinear algebra ----------------------------------------------------

/// Mode-m matricization: rows indexed by mode m, columns by the remaining
/// modes in increasing order with the last varying fastest.
Tensor mode_unfold(const Tensor& t, std::size_t mode);

/// Inverse of mode_unfold for the given full shape.
Tensor mode_refold(const Tensor& unfolded, std::size_t mode,
                   const std::vector<std::size_t>& shape);

/// t x_mode m where m is (k x dim_mode); replaces mode size with k.
Tensor mode_product(const Tensor& t, const Tensor& m, std::size_t mode);

/// Core multiplied along every mode by its factor.
Tensor tucker_reconstruct(const TuckerFactors& f);

/// Reconstruction restricted to fixed coordinates, computed by contracting
/// each fixed mode with the matching factor row; never materializes the full
/// tensor. Result covers the unfixed modes in increasing order (shape {1}
/// when everything is fixed).
Tensor tucker_slice(const TuckerFactors& f,
                    const std::map<std::size_t, std::size_t>& fixed);

/// Deterministic orthonormal matrix: orthonormal columns when rows >= cols,
/// orthonormal rows otherwise.
Tensor orthonormal_init(std::size_t rows, std::size_t cols, std::uint64_t seed);

/// Higher-order SVD: factor i holds the leading ranks[i] left singular
/// vectors of the mode-i unfolding (sign-fixed so the largest-magnitude
/// entry of each vector is positive); core is t contracted with the factor
/// transposes.
TuckerFactors hosvd(const Tensor& t, const std::vector<std::size_t>& ranks);

// --- small dense helpers ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);
Tensor random_normal(std::vector<std::size_t> shape, std::uint64_t seed,
                     double stddev = 1.0);
double frobenius_norm(const Tensor& t);
double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace tenslora
