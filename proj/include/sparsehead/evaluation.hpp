#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sparsehead/tensor.hpp"

namespace sparsehead {

/// Multinomial logistic probe trained on frozen representations; gradients
/// never reach the features or the encoder behind them.
struct ProbeModel {
  Tensor weight;  // [classes x d]
  Tensor bias;    // [classes]
  std::vector<double> loss_trace;
  std::uint32_t n_classes = 0;
};

struct ProbeOptions {
  std::size_t iters = 500;
  double lr = 0.1;
  std::uint64_t seed = 0;
  bool standardize = false;  // optional feature standardization before the fit
};

ProbeModel train_probe(const Tensor& features, std::span<const std::uint16_t> labels,
                       const ProbeOptions& options = {});

/// Top-1 accuracy of the probe on a feature/label set.
double eval_probe(const ProbeModel& model, const Tensor& features,
                  std::span<const std::uint16_t> labels);

enum class KnnMetric { cosine, euclidean };

/// k-nearest-neighbour labels for each test row: majority vote over the k
/// most similar training rows, ties broken by summed similarity and then by
/// the lowest class index.
std::vector<std::uint16_t> knn_classify(const Tensor& train_features,
                                        std::span<const std::uint16_t> train_labels,
                                        const Tensor& test_features, std::size_t k = 5,
                                        KnnMetric metric = KnnMetric::cosine);

}  // namespace sparsehead
