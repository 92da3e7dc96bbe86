#include "sparsehead/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sparsehead/errors.hpp"
#include "sparsehead/rng.hpp"

namespace sparsehead {

namespace {

std::uint32_t infer_classes(std::span<const std::uint16_t> labels) {
  std::uint16_t max_label = 0;
  for (std::uint16_t l : labels) max_label = std::max(max_label, l);
  return static_cast<std::uint32_t>(max_label) + 1;
}

}  // namespace

ProbeModel train_probe(const Tensor& features, std::span<const std::uint16_t> labels,
                       const ProbeOptions& options) {
  if (features.rank() != 2) throw DimensionError("probe: feature matrix required");
  const std::size_t n = features.rows(), d = features.cols();
  if (labels.size() != n) throw DimensionError("probe: label count does not match rows");
  if (n == 0) throw ContractError("probe: empty training set");

  const std::uint32_t classes = infer_classes(labels);
  if (classes < 2) throw DegenerateInputError("probe: training labels contain a single class");
  if (n < classes) throw ContractError("probe: need at least one row per class");

  // optional standardization, folded back into raw-space weights afterwards
  std::vector<double> mu(d, 0.0), sd(d, 1.0);
  std::vector<double> x(features.data());
  if (options.standardize) {
    std::vector<double> var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) mu[j] += x[i * d + j];
    for (double& v : mu) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = x[i * d + j] - mu[j];
        var[j] += c * c / static_cast<double>(n);
      }
    for (std::size_t j = 0; j < d; ++j) sd[j] = std::sqrt(var[j] + 1e-12);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) x[i * d + j] = (x[i * d + j] - mu[j]) / sd[j];
  }

  Rng rng(options.seed);
  std::vector<double> w(classes * d), b(classes, 0.0);
  for (auto& v : w) v = rng.uniform(-0.01, 0.01);

  ProbeModel model;
  model.n_classes = classes;
  std::vector<double> probs(n * classes);
  std::vector<double> gw(classes * d), gb(classes);

  auto forward_loss = [&]() {
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double row_max = -std::numeric_limits<double>::infinity();
      for (std::uint32_t c = 0; c < classes; ++c) {
        double logit = b[c];
        for (std::size_t j = 0; j < d; ++j) logit += w[c * d + j] * x[i * d + j];
        probs[i * classes + c] = logit;
        row_max = std::max(row_max, logit);
      }
      double denom = 0.0;
      for (std::uint32_t c = 0; c < classes; ++c) {
        probs[i * classes + c] = std::exp(probs[i * classes + c] - row_max);
        denom += probs[i * classes + c];
      }
      for (std::uint32_t c = 0; c < classes; ++c) probs[i * classes + c] /= denom;
      loss -= std::log(std::max(probs[i * classes + labels[i]], 1e-300));
    }
    return loss / static_cast<double>(n);
  };

  for (std::size_t it = 0; it < options.iters; ++it) {
    model.loss_trace.push_back(forward_loss());
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::uint32_t c = 0; c < classes; ++c) {
        const double delta =
            (probs[i * classes + c] - (labels[i] == c ? 1.0 : 0.0)) / static_cast<double>(n);
        gb[c] += delta;
        for (std::size_t j = 0; j < d; ++j) gw[c * d + j] += delta * x[i * d + j];
      }
    }
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= options.lr * gw[k];
    for (std::uint32_t c = 0; c < classes; ++c) b[c] -= options.lr * gb[c];
  }
  model.loss_trace.push_back(forward_loss());

  if (options.standardize) {  // fold the transform into raw-space parameters
    for (std::uint32_t c = 0; c < classes; ++c)
      for (std::size_t j = 0; j < d; ++j) {
        const double wj = w[c * d + j] / sd[j];
        b[c] -= wj * mu[j];
        w[c * d + j] = wj;
      }
  }
  model.weight = Tensor::from_data({classes, d}, std::move(w));
  model.bias = Tensor::from_data({classes}, std::move(b));
  return model;
}

double eval_probe(const ProbeModel& model, const Tensor& features,
                  std::span<const std::uint16_t> labels) {
  if (features.rank() != 2 || features.cols() != model.weight.cols()) {
    throw DimensionError("probe: feature width does not match the model");
  }
  const std::size_t n = features.rows();
  if (n == 0) throw ContractError("probe: empty evaluation set");
  if (labels.size() != n) throw DimensionError("probe: label count does not match rows");

  const std::size_t d = features.cols();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t best = 0;
    double best_logit = -std::numeric_limits<double>::infinity();
    for (std::uint32_t c = 0; c < model.n_classes; ++c) {
      double logit = model.bias.at(c);
      for (std::size_t j = 0; j < d; ++j) logit += model.weight.at(c, j) * features.at(i, j);
      if (logit > best_logit) {
        best_logit = logit;
        best = c;
      }
    }
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

std::vector<std::uint16_t> knn_classify(const Tensor& train_features,
                                        std::span<const std::uint16_t> train_labels,
                                        const Tensor& test_features, std::size_t k,
                                        KnnMetric metric) {
  if (train_features.rank() != 2 || test_features.rank() != 2 ||
      train_features.cols() != test_features.cols()) {
    throw DimensionError("knn: feature widths do not match");
  }
  const std::size_t n_train = train_features.rows(), d = train_features.cols();
  if (train_labels.size() != n_train) throw DimensionError("knn: label count mismatch");
  if (k == 0 || k > n_train) throw ConfigError("knn: k must be in [1, n_train]");

  const std::uint32_t classes = infer_classes(train_labels);

  std::vector<double> train_norm(n_train, 0.0);
  for (std::size_t i = 0; i < n_train; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += train_features.at(i, j) * train_features.at(i, j);
    train_norm[i] = std::sqrt(s);
  }

  std::vector<std::uint16_t> out;
  out.reserve(test_features.rows());
  std::vector<std::pair<double, std::size_t>> sims(n_train);

  for (std::size_t q = 0; q < test_features.rows(); ++q) {
    double qnorm = 0.0;
    for (std::size_t j = 0; j < d; ++j) qnorm += test_features.at(q, j) * test_features.at(q, j);
    qnorm = std::sqrt(qnorm);

    for (std::size_t i = 0; i < n_train; ++i) {
      double sim = 0.0;
      if (metric == KnnMetric::cosine) {
        const double denom = qnorm * train_norm[i];
        if (denom > 0.0) {
          for (std::size_t j = 0; j < d; ++j)
            sim += test_features.at(q, j) * train_features.at(i, j);
          sim /= denom;
        }
      } else {
        double dist2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = test_features.at(q, j) - train_features.at(i, j);
          dist2 += diff * diff;
        }
        sim = -std::sqrt(dist2);
      }
      sims[i] = {sim, i};
    }

    auto better = [](const std::pair<double, std::size_t>& a,
                     const std::pair<double, std::size_t>& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    };
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(),
                      better);

    std::vector<std::size_t> votes(classes, 0);
    std::vector<double> simsum(classes, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      const std::uint16_t label = train_labels[sims[i].second];
      votes[label] += 1;
      simsum[label] += sims[i].first;
    }
    std::uint16_t best = 0;
    for (std::uint16_t c = 1; c < classes; ++c) {
      if (votes[c] > votes[best] || (votes[c] == votes[best] && simsum[c] > simsum[best])) {
        best = c;
      }
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace sparsehead
