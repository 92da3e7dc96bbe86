#include "sparsehead/optimizer.hpp"

#include <cmath>

#include "sparsehead/errors.hpp"

namespace sparsehead {

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, AdamConfig cfg) : cfg_(cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("adam: lr must be positive");
  for (Tensor& p : params) {
    if (!p.requires_grad()) throw ContractError("adam: parameters must require gradients");
    Slot s;
    s.param = p;
    s.m.assign(p.numel(), 0.0);
    s.v.assign(p.numel(), 0.0);
    slots_.push_back(std::move(s));
  }
}

void AdamOptimizer::set_decay_exempt(const Tensor& param) {
  for (Slot& s : slots_) {
    if (s.param.same_storage(param)) {
      s.decay_exempt = true;
      return;
    }
  }
  throw ContractError("adam: decay-exempt tensor is not a registered parameter");
}

void AdamOptimizer::step(double lr_override) {
  const double lr = lr_override > 0.0 ? lr_override : cfg_.lr;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

  for (Slot& s : slots_) {
    const std::vector<double>& g = s.param.grad();
    std::vector<double>& p = s.param.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) throw NumericError("adam: non-finite gradient (divergence)");
      if (cfg_.weight_decay != 0.0 && !s.decay_exempt) p[i] -= lr * cfg_.weight_decay * p[i];
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = s.m[i] / bc1;
      const double v_hat = s.v[i] / bc2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

void AdamOptimizer::zero_grad() {
  for (Slot& s : slots_) s.param.zero_grad();
}

Tensor prox_l21(const Tensor& w, double eta_lambda) {
  if (w.rank() != 2) throw DimensionError("prox_l21: matrix input required");
  if (eta_lambda < 0.0) throw ContractError("prox_l21: eta_lambda must be >= 0");
  Tensor out = w.clone();
  prox_l21_inplace(out, eta_lambda);
  return out;
}

void prox_l21_inplace(Tensor& w, double eta_lambda) {
  if (w.rank() != 2) throw DimensionError("prox_l21: matrix input required");
  if (eta_lambda < 0.0) throw ContractError("prox_l21: eta_lambda must be >= 0");
  if (eta_lambda == 0.0) return;
  const std::size_t m = w.rows(), k = w.cols();
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += w.at(i, j) * w.at(i, j);
    const double norm = std::sqrt(s);
    const double factor = norm > eta_lambda ? 1.0 - eta_lambda / norm : 0.0;
    for (std::size_t i = 0; i < m; ++i) w.at(i, j) *= factor;
  }
}

}  // namespace sparsehead
