#pragma once

// Minimal reverse-mode automatic differentiation over row-major matrices.
//
// A Tape records every operation of one forward pass. Each recorded node owns
// its value and a backward closure that accumulates into its parents'
// gradients. Tapes are single-use: build, call backward() once, read grads.

#include <Eigen/SparseCore>

#include <functional>
#include <vector>

#include "fedcsr/tensor.hpp"

namespace fedcsr::ad {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] double scalar() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] Tape* tape() const { return tape_; }
  [[nodiscard]] int id() const { return id_; }
  [[nodiscard]] bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);

  /// Records a derived node. `backward` may be empty when no parent needs grad.
  Var record(Matrix value, bool requires_grad, Backward backward);

  [[nodiscard]] const Matrix& value(int id) const { return nodes_[id].value; }
  [[nodiscard]] bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  /// Gradient of the last backward() root w.r.t. node `id` (zeros if untouched).
  [[nodiscard]] Matrix grad(int id) const;

  void accumulate(int id, const Matrix& g);

  /// Seeds d(root)/d(root) = 1 for a 1×1 root and propagates.
  void backward(Var root);

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

/// Leaf vars for every tensor of `params`, in order.
std::vector<Var> bind(Tape& tape, const NamedTensors& params);

/// Gradients of the bound leaves in the same layout as `params`.
NamedTensors gradients(const Tape& tape, const NamedTensors& params, const std::vector<Var>& vars);

// Elementwise and structural ops.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_bias(Var x, Var bias);                 // bias is 1×cols, broadcast over rows
Var mul_constant(Var x, const Matrix& factor);  // elementwise product with a constant
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a · bᵀ
Var sparse_matmul(const SparseMatrix& lhs, Var x);
Var gather_rows(Var table, const std::vector<int>& rows);
Var concat_rows(Var a, Var b);
Var stop_gradient(Var x);

Var exp(Var x);
Var clamp(Var x, double lo, double hi);
Var softplus(Var x);
Var gelu(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-6);

Var sum(Var x);
Var mean(Var x);
Var rowwise_dot(Var a, Var b);  // n×1

/// Rows rescaled to unit L2 norm; rows with norm below 1e-12 map to zero and
/// are counted in `zero_rows` when provided.
Var l2_normalize_rows(Var x, int* zero_rows = nullptr);

/// Causally masked multi-head attention over (batch·T)×d projections.
/// Key j is visible to query i iff j <= i and (key_real[j] or j == i), both
/// indices taken within the same sequence.
Var causal_attention(Var q, Var k, Var v, int batch, int seq_len, int heads,
                     const std::vector<char>& key_real);

/// Causal multi-head attention over contiguous row segments: within segment
/// s (rows seg_start[s] .. seg_start[s] + seg_len[s] − 1) row i attends to
/// rows j <= i. Segments must tile the rows in order.
Var segment_causal_attention(Var q, Var k, Var v, const std::vector<int>& seg_start,
                             const std::vector<int>& seg_len, int heads);

/// Mean over the listed rows of −log softmax(logits[row])[target].
Var softmax_cross_entropy(Var logits, const std::vector<int>& rows,
                          const std::vector<int>& targets);

/// Weighted mean over rows of Σ_dim ½(μ² + σ² − 1 − 2 ln σ).
Var kl_standard_normal(Var mu, Var sigma, const std::vector<double>& row_weight);

/// Contrastive cross-entropy on a square logit matrix: mean over rows i of
/// −S[i, positive[i]] + log Σ_{j≠i} exp S[i, j].
Var contrastive_cross_entropy(Var logits, const std::vector<int>& positive);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace fedcsr::ad
