#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "blastlab/errors.hpp"

namespace blastlab {

/// Dense 64-bit real tensor with reverse-mode automatic differentiation.
///
/// Rank 1 and rank 2 are the only shapes the repo needs; a scalar is a rank-1
/// tensor of length 1. Values are row-major. Each tensor owns an optional
/// gradient buffer of identical shape, populated by backward(). Operations
/// record the computation graph unless gradient recording is globally
/// disabled (see NoGradGuard), in which case they behave as plain math.
class Tensor {
 public:
  struct Node;
  using NodePtr = std::shared_ptr<Node>;

  struct Node {
    std::vector<int> shape;
    std::vector<double> val;
    std::vector<double> grad;  // empty until needed; same size as val after
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;  // accumulates into parents' grad

    std::size_t numel() const { return val.size(); }
    void ensure_grad();
  };

  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->val.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->val; }
  std::span<double> mutable_values() { return node_->val; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad();
  double item() const;

  Node* node() const { return node_.get(); }
  NodePtr shared_node() const { return node_; }

  /// Drops grad buffer contents (used by the optimizer between steps).
  void zero_grad();

  /// True when every value is finite.
  bool all_finite() const;

 private:
  NodePtr node_;
};

/// RAII guard that disables graph recording within its scope.
/// Used for rollouts, target-network passes, and evaluation.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// ---- graph-recording operations -------------------------------------------

/// y = x @ w for x:[m,k], w:[k,n] -> [m,n].
Tensor matmul(const Tensor& x, const Tensor& w);

/// y = x + b with b:[n] broadcast over the rows of x:[m,n].
Tensor add_rowvec(const Tensor& x, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise

/// y = alpha * x + beta, elementwise.
Tensor affine(const Tensor& x, double alpha, double beta);

Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor elu(const Tensor& x);
Tensor abs_op(const Tensor& x);
Tensor square(const Tensor& x);

/// Scalar sum of all entries.
Tensor sum(const Tensor& x);

/// out[i] = x[i, idx[i]] for x:[m,n] -> [m].
Tensor gather_cols(const Tensor& x, const std::vector<int>& idx);

/// Column-stack k rank-1 tensors of length m into [m,k].
Tensor stack_cols(const std::vector<Tensor>& cols);

/// Keep the first rows of x:[m,n] -> [m2,n] (m2 <= m). Gradient scatters back.
Tensor take_rows(const Tensor& x, int m2);

/// Row-batched matmul against per-row weight blocks:
/// x:[m,p], w:[m,p*q] -> out[r,j] = sum_i x[r,i] * w[r, i*q + j].
Tensor bmm_rows(const Tensor& x, const Tensor& w, int q);

/// [m,1] -> [m].
Tensor squeeze1(const Tensor& x);

/// Same data, new shape (numel must match). Gradient passes through.
Tensor reshape(const Tensor& x, std::vector<int> shape);

/// out[i] = sum_j x[i,j] for x:[m,n] -> [m].
Tensor row_sum(const Tensor& x);

/// Factory for custom operations with hand-written backward passes
/// (the fused network kernels in nn.cpp use this).
Tensor make_op(std::vector<int> shape, std::vector<double> val,
               std::vector<Tensor::NodePtr> parents,
               std::function<void(Tensor::Node&)> backprop);

/// Runs reverse-mode accumulation from a scalar loss. Gradients accumulate
/// into every reachable tensor with requires_grad; leaves keep their buffers
/// across calls until zero_grad(). Large intermediate buffers are released
/// as their nodes retire, so episode-long graphs stay within memory.
void backward(const Tensor& loss);

// ---- raw kernels (no graph) ------------------------------------------------
// Deterministic by construction: every output element is accumulated in a
// fixed k-order, so results are bitwise reproducible.

namespace kernels {
// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c);
// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c);
// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c);
}  // namespace kernels

std::string shape_str(const std::vector<int>& s);

}  // namespace blastlab
