#include "sparsehead/objectives.hpp"

#include <cmath>

#include "sparsehead/errors.hpp"

namespace sparsehead {

Tensor infonce(Tape& tape, const ContrastiveBatch& batch) {
  const Tensor& z = batch.z;
  if (z.rank() != 2 || z.rows() < 2 || z.rows() % 2 != 0) {
    throw ContractError("infonce: embeddings must be an even number of paired rows");
  }
  if (!(batch.temperature > 0.0)) throw ConfigError("infonce: temperature must be positive");
  const std::size_t n = z.rows();

  Tensor sims = scale(tape, cosine_matrix(tape, z), 1.0 / batch.temperature);

  // denominator mask: everything except the anchor itself
  Tensor excl = Tensor::full({n, n}, 1.0);
  for (std::size_t i = 0; i < n; ++i) excl.at(i, i) = 0.0;
  // positive mask: the paired view
  Tensor pos = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) pos.at(i, i % 2 == 0 ? i + 1 : i - 1) = 1.0;

  Tensor denom = row_sum(tape, mul(tape, exp(tape, sims), excl));
  Tensor log_denom_total = sum(tape, log(tape, denom));
  Tensor pos_total = sum(tape, mul(tape, sims, pos));
  return sub(tape, log_denom_total, pos_total);
}

Tensor l21_norm(Tape& tape, const Tensor& w) {
  if (w.rank() != 2) throw DimensionError("l21_norm: matrix input required");
  const std::size_t m = w.rows(), k = w.cols();

  auto col_norms = std::make_shared<std::vector<double>>(k, 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += w.at(i, j) * w.at(i, j);
    (*col_norms)[j] = std::sqrt(s);
    total += (*col_norms)[j];
  }
  if (!std::isfinite(total)) throw NumericError("l21_norm: non-finite result");

  Tensor out = Tensor::zeros({}, w.requires_grad());
  out.data()[0] = total;
  if (out.requires_grad()) {
    tape.record(out, [w, out, col_norms, m, k]() {
      const double g = out.grad()[0];
      Tensor wt = w;
      for (std::size_t j = 0; j < k; ++j) {
        const double norm = (*col_norms)[j];
        if (norm == 0.0) continue;  // subgradient 0 at zero columns
        for (std::size_t i = 0; i < m; ++i) wt.grad()[i * k + j] += g * wt.at(i, j) / norm;
      }
    });
  }
  return out;
}

std::vector<std::size_t> column_support(const Tensor& w, double threshold) {
  if (w.rank() != 2) throw DimensionError("column_support: matrix input required");
  if (threshold < 0.0) throw ContractError("column_support: threshold must be >= 0");
  std::vector<std::size_t> support;
  for (std::size_t j = 0; j < w.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i) s += w.at(i, j) * w.at(i, j);
    if (std::sqrt(s) > threshold) support.push_back(j);
  }
  return support;
}

Tensor total_loss(Tape& tape, const ContrastiveBatch& batch, const ModelState& model,
                  const SparsityConfig& cfg) {
  if (cfg.mode != SparsityMode::penalty) {
    throw ConfigError("total_loss: proximal mode applies the regularizer in the optimizer");
  }
  if (cfg.lambda < 0.0) throw ConfigError("total_loss: lambda must be >= 0");
  const bool identity = model.head_spec().kind == HeadKind::identity;
  if (identity && cfg.lambda > 0.0) {
    throw ConfigError("total_loss: identity head requires lambda == 0");
  }
  Tensor nce = infonce(tape, batch);
  if (identity || cfg.lambda == 0.0) return nce;
  return add(tape, nce, scale(tape, l21_norm(tape, model.regularized_matrix()), cfg.lambda));
}

}  // namespace sparsehead
