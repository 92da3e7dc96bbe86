#pragma once

#include <cstddef>
#include <vector>

#include "sparsehead/models.hpp"
#include "sparsehead/tensor.hpp"

namespace sparsehead {

/// Embeddings arranged as view pairs: rows 2i and 2i+1 are the two
/// augmentations of sample i. Row count must be even, temperature positive.
struct ContrastiveBatch {
  Tensor z;  // [2N x m]
  double temperature = 0.5;
};

enum class SparsityMode { penalty, proximal };

struct SparsityConfig {
  double lambda = 0.0;
  SparsityMode mode = SparsityMode::penalty;
  double zero_threshold = 1e-8;  // column-activity counting
};

/// Temperature-scaled InfoNCE summed over all 2N anchors. Each anchor's
/// positive is its paired view; the denominator runs over every embedding
/// except the anchor itself (the positive included).
Tensor infonce(Tape& tape, const ContrastiveBatch& batch);

/// Sum over columns of column Euclidean norms, with subgradient 0 at zero
/// columns. Column grouping matches the feature-support reading: column j of
/// the head matrix is the weight a head puts on input feature j.
Tensor l21_norm(Tape& tape, const Tensor& w);

/// Indices j with ||W_:,j||_2 > threshold; the size of the result is the
/// empirical column L2,0 count.
std::vector<std::size_t> column_support(const Tensor& w, double threshold);

/// infonce + lambda * l21_norm(regularized head matrix). Penalty mode only;
/// in proximal mode the regularizer lives in the optimizer step instead.
/// Identity heads carry no regularizer and require lambda == 0.
Tensor total_loss(Tape& tape, const ContrastiveBatch& batch, const ModelState& model,
                  const SparsityConfig& cfg);

}  // namespace sparsehead
