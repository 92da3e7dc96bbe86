#include "sparsehead/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "sparsehead/errors.hpp"
#include "sparsehead/rng.hpp"

namespace sparsehead {

Tensor covariance(const Tensor& v) {
  if (v.rank() != 2) throw DimensionError("covariance: matrix input required");
  const std::size_t n = v.rows(), d = v.cols();
  if (n < 2) throw ContractError("covariance: at least two rows required");

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += v.at(i, j);
  for (double& m : mean) m /= static_cast<double>(n);

  std::vector<double> centered(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centered[i * d + j] = v.at(i, j) - mean[j];

  Tensor c = Tensor::zeros({d, d});
  const double norm = 1.0 / static_cast<double>(n - 1);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += centered[i * d + a] * centered[i * d + b];
      c.at(a, b) = s * norm;
      c.at(b, a) = s * norm;
    }
  }
  return c;
}

Evd symmetric_evd(const Tensor& c) {
  if (c.rank() != 2 || c.rows() != c.cols()) {
    throw DimensionError("symmetric_evd: square matrix required");
  }
  const std::size_t d = c.rows();
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j)
      if (std::abs(c.at(i, j) - c.at(j, i)) > 1e-8) {
        throw ContractError("symmetric_evd: input is not symmetric");
      }

  // Iterate on C / max|C_ij| so the stopping threshold is attainable for any
  // input magnitude; at unit scale this is the plain absolute threshold.
  double max_abs = 0.0;
  for (double v : c.data()) max_abs = std::max(max_abs, std::abs(v));
  const double unit = max_abs > 1.0 ? max_abs : 1.0;

  std::vector<double> a(c.data());
  for (double& v : a) v /= unit;
  std::vector<double> vecs(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) vecs[i * d + i] = 1.0;

  auto off_frobenius = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        if (i != j) s += a[i * d + j] * a[i * d + j];
    return std::sqrt(s);
  };

  constexpr double kOffTol = 1e-10;
  constexpr int kMaxSweeps = 100;
  bool converged = off_frobenius() < kOffTol;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    for (std::size_t p = 0; p + 1 < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a[p * d + q];
        if (apq == 0.0) continue;
        const double theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double cs = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * cs;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = a[k * d + p], akq = a[k * d + q];
          a[k * d + p] = cs * akp - sn * akq;
          a[k * d + q] = sn * akp + cs * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = a[p * d + k], aqk = a[q * d + k];
          a[p * d + k] = cs * apk - sn * aqk;
          a[q * d + k] = sn * apk + cs * aqk;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double vkp = vecs[k * d + p], vkq = vecs[k * d + q];
          vecs[k * d + p] = cs * vkp - sn * vkq;
          vecs[k * d + q] = sn * vkp + cs * vkq;
        }
      }
    }
    converged = off_frobenius() < kOffTol;
  }
  if (!converged) throw NumericError("symmetric_evd: Jacobi sweeps did not converge");

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a[x * d + x] > a[y * d + y]; });

  Evd out;
  out.eigenvalues.resize(d);
  out.eigenvectors = Tensor::zeros({d, d});
  for (std::size_t r = 0; r < d; ++r) {
    out.eigenvalues[r] = a[order[r] * d + order[r]] * unit;
    for (std::size_t k = 0; k < d; ++k) out.eigenvectors.at(k, r) = vecs[k * d + order[r]];
  }
  return out;
}

EffectiveRank effective_rank(std::span<const double> sigma, double eps_rel) {
  EffectiveRank r;
  if (sigma.empty() || sigma.front() <= 0.0) return r;
  const double cutoff = eps_rel * sigma.front();
  double total = 0.0;
  for (double s : sigma) {
    if (s > cutoff) ++r.count;
    if (s > 0.0) total += s;
  }
  double h = 0.0;
  for (double s : sigma) {
    if (s <= 0.0) continue;
    const double p = s / total;
    h -= p * std::log(p);
  }
  r.entropy = std::exp(h);
  return r;
}

double minmax_ratio(std::span<const double> anchor, const Tensor& others) {
  if (others.rank() != 2 || others.cols() != anchor.size()) {
    throw DimensionError("minmax_ratio: anchor width does not match points");
  }
  const std::size_t n = others.rows(), d = others.cols();
  if (n == 0) throw ContractError("minmax_ratio: point set must be nonempty");

  double dmin = std::numeric_limits<double>::infinity(), dmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = anchor[j] - others.at(i, j);
      s += diff * diff;
    }
    const double dist = std::sqrt(s);
    dmin = std::min(dmin, dist);
    dmax = std::max(dmax, dist);
  }
  if (dmin == 0.0) throw DegenerateInputError("minmax_ratio: anchor duplicates a point");
  return (dmax - dmin) / dmin;
}

std::vector<std::pair<std::size_t, double>> concentration_curve(std::span<const std::size_t> dims,
                                                                std::size_t n, std::size_t trials,
                                                                std::uint64_t seed) {
  if (n < 2) throw ContractError("concentration_curve: n must be >= 2");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    if (dims[i] >= dims[i + 1]) throw ContractError("concentration_curve: dims must be ascending");
  }
  std::vector<std::pair<std::size_t, double>> curve;
  for (std::size_t di = 0; di < dims.size(); ++di) {
    const std::size_t d = dims[di];
    double total = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      Rng rng(Rng::mix(seed, di * trials + t));
      Tensor points = Tensor::zeros({n, d});
      for (double& v : points.data()) v = rng.gaussian();
      std::vector<double> anchor(d);
      for (double& v : anchor) v = rng.gaussian();
      total += minmax_ratio(anchor, points);
    }
    curve.emplace_back(d, total / static_cast<double>(trials));
  }
  return curve;
}

SpectrumReport spectrum_report(const Tensor& representations, const Tensor& embeddings) {
  SpectrumReport rep;
  rep.c_r = covariance(representations);
  rep.c_z = covariance(embeddings);
  rep.sigma_r = symmetric_evd(rep.c_r).eigenvalues;
  rep.sigma_z = symmetric_evd(rep.c_z).eigenvalues;
  auto log_floor = [](const std::vector<double>& sigma) {
    std::vector<double> out;
    out.reserve(sigma.size());
    for (double s : sigma) out.push_back(std::log10(std::max(s, 0.0) + 1e-12));
    return out;
  };
  rep.log10_sigma_r = log_floor(rep.sigma_r);
  rep.log10_sigma_z = log_floor(rep.sigma_z);
  rep.erank_r = effective_rank(rep.sigma_r);
  rep.erank_z = effective_rank(rep.sigma_z);
  return rep;
}

void write_spectrum_csv(std::ostream& os, const SpectrumReport& report) {
  os << "index,sigma_r,log10_sigma_r,sigma_z,log10_sigma_z\n";
  const std::size_t rows = std::max(report.sigma_r.size(), report.sigma_z.size());
  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t i = 0; i < rows; ++i) {
    os << i << ',';
    if (i < report.sigma_r.size()) {
      os << fmt(report.sigma_r[i]) << ',' << fmt(report.log10_sigma_r[i]);
    } else {
      os << ',';
    }
    os << ',';
    if (i < report.sigma_z.size()) {
      os << fmt(report.sigma_z[i]) << ',' << fmt(report.log10_sigma_z[i]);
    } else {
      os << ',';
    }
    os << '\n';
  }
}

std::vector<std::size_t> solve_assignment(const Tensor& cost) {
  if (cost.rank() != 2 || cost.rows() != cost.cols()) {
    throw DimensionError("solve_assignment: square cost matrix required");
  }
  const int n = static_cast<int>(cost.rows());
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // Hungarian algorithm with potentials, 1-indexed internals.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::size_t> row_to_col(n, 0);
  for (int j = 1; j <= n; ++j) row_to_col[p[j] - 1] = static_cast<std::size_t>(j - 1);
  return row_to_col;
}

namespace {

struct ColumnStats {
  std::vector<double> mean, var;  // population variance of centered columns
};

ColumnStats column_stats(const Tensor& m) {
  const std::size_t n = m.rows(), d = m.cols();
  ColumnStats s;
  s.mean.assign(d, 0.0);
  s.var.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += m.at(i, j);
  for (double& v : s.mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = m.at(i, j) - s.mean[j];
      s.var[j] += c * c;
    }
  for (double& v : s.var) v /= static_cast<double>(n);
  return s;
}

}  // namespace

AlignmentReport gte_alignment(const Tensor& learned, const Tensor& gt) {
  if (learned.rank() != 2 || gt.rank() != 2 || learned.rows() != gt.rows()) {
    throw DimensionError("gte_alignment: row counts must match");
  }
  const std::size_t n = learned.rows();
  if (n < 10) throw ContractError("gte_alignment: at least 10 rows required");
  const std::size_t dl = learned.cols(), dg = gt.cols();

  const ColumnStats ls = column_stats(learned);
  const ColumnStats gs = column_stats(gt);
  constexpr double kVarFloor = 1e-24;

  AlignmentReport rep;
  rep.learned_zero_variance.resize(dl);
  rep.gt_zero_variance.resize(dg);
  for (std::size_t i = 0; i < dl; ++i) rep.learned_zero_variance[i] = ls.var[i] < kVarFloor;
  for (std::size_t j = 0; j < dg; ++j) rep.gt_zero_variance[j] = gs.var[j] < kVarFloor;

  // signed covariance and |Pearson r|
  Tensor signed_cov = Tensor::zeros({dl, dg});
  rep.correlation = Tensor::zeros({dl, dg});
  for (std::size_t i = 0; i < dl; ++i) {
    for (std::size_t j = 0; j < dg; ++j) {
      double cov = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        cov += (learned.at(r, i) - ls.mean[i]) * (gt.at(r, j) - gs.mean[j]);
      }
      cov /= static_cast<double>(n);
      signed_cov.at(i, j) = cov;
      if (rep.learned_zero_variance[i] || rep.gt_zero_variance[j]) {
        rep.correlation.at(i, j) = 0.0;  // flagged dimensions correlate as 0
      } else {
        rep.correlation.at(i, j) = std::abs(cov) / std::sqrt(ls.var[i] * gs.var[j]);
      }
    }
  }

  // maximize total |r| as a min-cost assignment on a padded square matrix
  const std::size_t k = std::max(dl, dg);
  Tensor costm = Tensor::zeros({k, k});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      costm.at(i, j) = (i < dl && j < dg) ? -rep.correlation.at(i, j) : 0.0;
  const std::vector<std::size_t> match = solve_assignment(costm);

  rep.assignment.assign(dl, AlignmentReport::npos);
  rep.matched_abs_r.assign(dl, 0.0);
  rep.scale.assign(dl, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < dl; ++i) {
    const std::size_t j = match[i];
    if (j >= dg) continue;  // matched to padding
    rep.assignment[i] = j;
    rep.matched_abs_r[i] = rep.correlation.at(i, j);
    total += rep.matched_abs_r[i];
    if (gs.var[j] >= kVarFloor) rep.scale[i] = signed_cov.at(i, j) / gs.var[j];
  }
  rep.mcc = total / static_cast<double>(std::min(dl, dg));
  return rep;
}

}  // namespace sparsehead
