#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "sparsehead/analysis.hpp"
#include "sparsehead/datagen.hpp"
#include "sparsehead/errors.hpp"
#include "sparsehead/models.hpp"
#include "sparsehead/objectives.hpp"

namespace sparsehead {

struct TrainConfig {
  std::size_t batch_size = 64;  // N sample pairs per step (2N view rows)
  std::size_t steps = 1000;
  double temperature = 0.5;
  double lambda = 1e-4;
  SparsityMode sparsity_mode = SparsityMode::penalty;
  double lr = 1e-3;
  double weight_decay = 1e-6;
  bool cosine_lr = false;
  EncoderSpec encoder;
  HeadSpec head;
  AugmentationRule augmentation;
  std::uint64_t seed = 0;
  std::size_t diag_every = 0;  // 0 means max(steps / 20, 1)
  std::size_t diag_max_rows = 512;
  // task mode: per-batch latent supports sampled once, then drawn per step
  std::size_t task_count = 0;
  std::size_t task_min_size = 0, task_max_size = 0;
};

struct StepLog {
  std::size_t step = 0;  // 1-based
  double loss_infonce = 0.0;
  double loss_reg = 0.0;  // lambda * l21(regularized matrix)
  std::size_t active_cols = 0;
  std::size_t erank_r = 0, erank_z = 0;  // threshold effective ranks
};

struct RunRecord {
  std::vector<double> loss_infonce, loss_reg;  // every step
  std::vector<StepLog> logged;                 // diagnostics cadence
  std::size_t steps_completed = 0;
  double wall_seconds = 0.0;  // never serialized into metrics
  std::uint64_t config_hash = 0;
  bool diverged = false;
};

/// Numerical divergence that carries the partial run record for diagnosis.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, RunRecord record)
      : NumericError(what), record(std::move(record)) {}
  RunRecord record;
};

struct TrainResult {
  ModelState model;
  RunRecord record;
};

/// Runs the contrastive loop: per step, sample a batch, build two views,
/// encode, project, take the loss (penalty mode folds in the L2,1 term;
/// proximal mode trains on InfoNCE and block-soft-thresholds the head matrix
/// after each Adam step with eta = lr * lambda). Deterministic in the seed.
TrainResult train(const TrainConfig& config, const Dataset& dataset,
                  const SyntheticWorld* world = nullptr);

/// One JSON object per logged step:
/// {"step":..,"loss_infonce":..,"loss_reg":..,"active_cols":..,"erank_r":..,"erank_z":..}
void write_metrics_jsonl(std::ostream& os, const RunRecord& record);

struct MinmaxStats {
  double mean = 0.0;
  std::size_t anchors = 0;
  std::size_t degenerate = 0;  // anchors skipped for duplicate points
};

struct DiagnosticsSnapshot {
  SpectrumReport spectrum;
  MinmaxStats embedding_minmax;
};

/// Spectra and embedding-space min-max distance stats over an evaluation set.
/// Pure with respect to the model.
DiagnosticsSnapshot snapshot_diagnostics(const ModelState& model, const Tensor& eval_x);

std::uint64_t hash_train_config(const TrainConfig& config);

}  // namespace sparsehead
