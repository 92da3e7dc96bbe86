#pragma once

#include <cstddef>
#include <vector>

#include "sparsehead/tensor.hpp"

namespace sparsehead {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay: the decay shrink is applied to the
/// parameter before the Adam delta and never enters the moment estimates.
/// Owned exclusively by one training loop.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor> params, AdamConfig cfg);

  /// Excludes a parameter from weight decay (used for the head matrix in
  /// proximal mode, where the prox already shrinks it).
  void set_decay_exempt(const Tensor& param);

  /// One update from the gradients currently held by the parameters.
  /// Non-finite gradients abort with a divergence error.
  void step(double lr_override = -1.0);

  void zero_grad();
  std::size_t step_count() const { return t_; }

 private:
  struct Slot {
    Tensor param;
    std::vector<double> m, v;
    bool decay_exempt = false;
  };
  std::vector<Slot> slots_;
  AdamConfig cfg_;
  std::size_t t_ = 0;
};

/// Block soft-threshold: each column j of w maps to
/// max(0, 1 - eta_lambda / ||w_:,j||) * w_:,j, the exact minimizer of
/// (1/2)||V - W||_F^2 + eta_lambda ||V||_{2,1}. Columns with norm below the
/// threshold become exactly zero.
Tensor prox_l21(const Tensor& w, double eta_lambda);

/// In-place variant used by the training loop on the live head matrix.
void prox_l21_inplace(Tensor& w, double eta_lambda);

}  // namespace sparsehead
