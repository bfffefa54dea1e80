// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "tenslora/tensor.hpp"

// Reverse-mode differentiation on a define-by-run tape. Ops record onto the
// tape bound to the current thread (Tape::Scope); with no tape bound they
// are plain tensor math, which is how evaluation and finite differences run.
namespace tenslora::ag {

namespace detail {

struct VarState {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;

  bool grad_defined() const { return !grad.empty(); }
  void accumulate_grad(const Tensor& g);
};

using StatePtr = std::shared_ptr<VarState>;

struct OpNode {
  const char* name;
  std::vector<StatePtr> inputs;
  StatePtr output;
  std::function<void()> backprop;  // reads output->grad, feeds input grads
};

}  // namespace detail

class Variable {
 public:
  Variable() = default;
  explicit Variable(Tensor value, bool requires_grad = false);

  static Variable constant(Tensor value) { return Variable(std::move(value), false); }
  static Variable param(Tensor value) { return Variable(std::move(value), true); }

  bool defined() const { return static_cast<bool>(state_); }
  const Tensor& value() const { return state_->value; }
  Tensor& mutable_value() { return state_->value; }
  bool requires_grad() const { return state_ && state_->requires_grad; }

  bool has_grad() const { return state_ && state_->grad_defined(); }
  /// Gradient, or zeros of the value's shape if none accumulated yet.
  Tensor grad() const;
  void zero_grad();

  /// Deep copy with no graph history.
  Variable detached_copy() const;

  detail::StatePtr state() const { return state_; }

 private:
  detail::StatePtr state_;
};

/// Recorded operations in issue order (inputs always precede their users).
/// Confined to one thread while recording or replaying.
class Tape {
 public:
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* current();

  void record(const char* name, std::vector<detail::StatePtr> inputs,
              detail::StatePtr output, std::function<void()> backprop);

  /// Reverse sweep from a scalar loss. Leaf gradients accumulate across
  /// calls; intermediate gradients are reset at the start of each sweep.
  void backward(const Variable& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<detail::OpNode> nodes_;
};

// --- forward ops -------------------------------------------------------------

Variable add(const Variable& a, const Variable& b);
Variable scale(const Variable& a, double s);
/// x (m x n) plus a broadcast (1 x n) row.
Variable add_row_broadcast(const Variable& x, const Variable& row);
/// x (b*t x n) plus a (t x n) block tiled over the leading groups.
Variable add_tiled_rows(const Variable& x, const Variable& block);
Variable matmul(const Variable& a, const Variable& b);
Variable mode_product(const Variable& t, const Variable& m, std::size_t mode);
Variable concat_along_mode(const std::vector<Variable>& parts, std::size_t mode);
Variable slice_mode(const Variable& t, std::size_t mode, std::size_t start,
                    std::size_t count);
Variable reshape(const Variable& t, std::vector<std::size_t> shape);
Variable permute(const Variable& t, std::vector<std::size_t> perm);
Variable softmax_rows(const Variable& x);
Variable layer_norm(const Variable& x, const Variable& gamma, const Variable& beta,
                    double eps = 1e-5);
Variable gelu(const Variable& x);
Variable embedding_lookup(const Variable& table, const std::vector<int>& ids);
/// (b*t x n) -> (b x n), mean over each group of t rows.
Variable mean_pool_rows(const Variable& x, std::size_t group);
/// Scaled dot-product attention over `heads` head slices of q/k/v, each
/// (batch*t x d) with contiguous per-example row blocks. One tape node.
Variable multi_head_attention(const Variable& q, const Variable& k, const Variable& v,
                              std::size_t heads, std::size_t batch);
/// Mean negative log-likelihood with fused log-softmax. Scalar output.
Variable cross_entropy_loss(const Variable& logits, const std::vector<int>& labels);
Variable sum(const Variable& x);

// --- finite differences -------------------------------------------------------

/// Runs f once under a fresh tape to collect analytic gradients, then probes
/// sampled coordinates of each parameter with central differences of step h.
/// Returns the worst |analytic - fd| / max(1e-12, |fd| + |analytic|).
/// samples_per_param == 0 checks every coordinate.
double finite_diff_check(const std::function<Variable()>& f,
                         const std::vector<Variable>& params, double h,
                         std::size_t samples_per_param = 0, std::uint64_t seed = 1);

}  // namespace tenslora::ag
