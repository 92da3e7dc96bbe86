#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

namespace sparsehead {

/// Dense row-major tensor of 64-bit floats, rank 0 (scalar) to 2 (matrix).
///
/// A Tensor is a shared handle: copies alias the same storage, which is what
/// lets a Tape's backward rules accumulate gradients into the parameter
/// tensors a model holds. Deep copies are explicit via clone().
///
/// Tensors that do not participate in gradients are immutable values, safe to
/// share read-only across threads. The gradient buffer exists iff
/// requires_grad() is true and always matches the data shape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                          bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t rank() const;
  std::size_t numel() const;
  /// Row/column counts; rank-1 tensors count as a single row of cols()
  /// entries, scalars as 1x1.
  std::size_t rows() const;
  std::size_t cols() const;

  bool requires_grad() const;

  std::vector<double>& data();
  const std::vector<double>& data() const;
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  double value() const;  // scalar tensors only

  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;
  double& at(std::size_t i);
  double at(std::size_t i) const;

  /// Detached deep copy (fresh storage, no gradient participation).
  Tensor clone() const;

  /// True iff both handles alias the same storage.
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  struct Node {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  std::shared_ptr<Node> node_;

  friend class Tape;
};

/// Define-by-run record of differentiable operations.
///
/// Operations append themselves in execution order, so the list is
/// topologically sorted by construction. backward() replays it exactly once
/// in reverse. A Tape is rebuilt every forward pass and is confined to a
/// single thread.
class Tape {
 public:
  void record(Tensor output, std::function<void()> backward_rule);
  std::size_t size() const { return ops_.size(); }
  void clear();

 private:
  struct Op {
    Tensor output;
    std::function<void()> backward_rule;
  };
  std::vector<Op> ops_;

  friend void backward(const Tensor& loss, Tape& tape);
};

// -- recorded operations ----------------------------------------------------
//
// Each op validates shapes, computes the forward value, checks the result is
// finite, and (when any input requires a gradient) registers its backward
// rule on the tape. Broadcasting is limited to scalar-with-tensor and
// row-vector-with-matrix on the right-hand operand.

/// a[n x k] . b[k x m]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
/// a[n x k] . b[m x k]^T
Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor relu(Tape& tape, const Tensor& a);
Tensor exp(Tape& tape, const Tensor& a);
Tensor log(Tape& tape, const Tensor& a);
Tensor scale(Tape& tape, const Tensor& a, double c);

/// Rows scaled to unit Euclidean norm; a row norm <= 1e-12 is degenerate.
Tensor row_normalize(Tape& tape, const Tensor& a);
/// [n x m] -> rank-1 [n] of row sums.
Tensor row_sum(Tape& tape, const Tensor& a);
/// Full reduction to a rank-0 scalar.
Tensor sum(Tape& tape, const Tensor& a);

/// Pairwise cosine similarity matrix of the rows of z: entry (i, j) is
/// cos(z_i, z_j). Symmetric with unit diagonal.
Tensor cosine_matrix(Tape& tape, const Tensor& z);

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
/// the recorded operations. loss must be scalar. Repeated calls without
/// zero_grad() accumulate into leaf gradients.
void backward(const Tensor& loss, Tape& tape);

}  // namespace sparsehead
