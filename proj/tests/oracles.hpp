#pragma once

// Independent oracles used by the test suites. Everything here is
// deliberately written against the math definitions, not against the library
// implementation paths it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "sparsehead/tensor.hpp"

namespace oracles {

/// Central finite difference d f / d x[i] with step h.
inline double finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> x, std::size_t i, double h = 1e-5) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double fp = f(x);
  x[i] = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

/// Relative error with an absolute floor for near-zero references.
inline double rel_err(double got, double want, double floor = 1e-8) {
  return std::abs(got - want) / std::max(std::abs(want), floor);
}

/// InfoNCE by the book: double loop over anchors and candidates, rows 2i and
/// 2i+1 are the two views of sample i, denominator excludes only the anchor.
inline double brute_infonce(const std::vector<std::vector<double>>& z, double tau) {
  auto cosine = [](const std::vector<double>& u, const std::vector<double>& v) {
    double uv = 0.0, uu = 0.0, vv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      uv += u[i] * v[i];
      uu += u[i] * u[i];
      vv += v[i] * v[i];
    }
    return uv / (std::sqrt(uu) * std::sqrt(vv));
  };
  const std::size_t n = z.size();
  double loss = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    const std::size_t pos = (l % 2 == 0) ? l + 1 : l - 1;
    const double numer = std::exp(cosine(z[l], z[pos]) / tau);
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == l) continue;
      denom += std::exp(cosine(z[l], z[j]) / tau);
    }
    loss += -std::log(numer / denom);
  }
  return loss;
}

/// kNN with cosine similarity, full sort, majority vote, ties by summed
/// similarity then lowest class index.
inline std::vector<std::uint16_t> brute_knn(const std::vector<std::vector<double>>& train,
                                            const std::vector<std::uint16_t>& labels,
                                            const std::vector<std::vector<double>>& test,
                                            std::size_t k) {
  auto cosine = [](const std::vector<double>& u, const std::vector<double>& v) {
    double uv = 0.0, uu = 0.0, vv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      uv += u[i] * v[i];
      uu += u[i] * u[i];
      vv += v[i] * v[i];
    }
    const double d = std::sqrt(uu) * std::sqrt(vv);
    return d > 0.0 ? uv / d : 0.0;
  };
  std::vector<std::uint16_t> out;
  for (const auto& q : test) {
    std::vector<std::pair<double, std::size_t>> sims;
    for (std::size_t i = 0; i < train.size(); ++i) sims.emplace_back(cosine(q, train[i]), i);
    std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    const std::uint16_t n_classes = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<std::size_t> votes(n_classes, 0);
    std::vector<double> simsum(n_classes, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      votes[labels[sims[i].second]] += 1;
      simsum[labels[sims[i].second]] += sims[i].first;
    }
    std::uint16_t best = 0;
    for (std::uint16_t c = 1; c < n_classes; ++c) {
      if (votes[c] > votes[best] || (votes[c] == votes[best] && simsum[c] > simsum[best])) {
        best = c;
      }
    }
    out.push_back(best);
  }
  return out;
}

/// Tensor helpers shared by test files.
inline sparsehead::Tensor tensor_2d(std::size_t n, std::size_t m, std::vector<double> v,
                                    bool rg = false) {
  return sparsehead::Tensor::from_data({n, m}, std::move(v), rg);
}

}  // namespace oracles
