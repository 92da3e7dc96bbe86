#include "sparsehead/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <string>

#include "sparsehead/optimizer.hpp"
#include "sparsehead/rng.hpp"

namespace sparsehead {

namespace {

std::string canonical_config_string(const TrainConfig& c) {
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::string s;
  s += "bs=" + std::to_string(c.batch_size);
  s += ";steps=" + std::to_string(c.steps);
  s += ";tau=" + num(c.temperature);
  s += ";lambda=" + num(c.lambda);
  s += ";mode=" + std::string(c.sparsity_mode == SparsityMode::penalty ? "penalty" : "proximal");
  s += ";lr=" + num(c.lr);
  s += ";wd=" + num(c.weight_decay);
  s += ";coslr=" + std::to_string(c.cosine_lr ? 1 : 0);
  s += ";enc=" + std::to_string(c.encoder.input_dim);
  for (std::size_t h : c.encoder.hidden) s += "-" + std::to_string(h);
  s += "-" + std::to_string(c.encoder.output_dim);
  s += ";head=" + std::string(head_kind_name(c.head.kind));
  s += "," + std::to_string(c.head.input_dim) + "," + std::to_string(c.head.output_dim);
  s += "," + std::to_string(c.head.hidden) + "," + std::to_string(c.head.standardize ? 1 : 0);
  s += ";aug=" +
       std::string(c.augmentation.kind == AugmentationKind::latent_nuisance ? "latent" : "pixel");
  s += "," + num(c.augmentation.noise_scale) + "," + num(c.augmentation.flip_prob);
  s += "," + std::to_string(c.augmentation.mask_size);
  s += ";seed=" + std::to_string(c.seed);
  s += ";diag=" + std::to_string(c.diag_every) + "," + std::to_string(c.diag_max_rows);
  s += ";tasks=" + std::to_string(c.task_count) + "," + std::to_string(c.task_min_size) + "," +
       std::to_string(c.task_max_size);
  return s;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void validate(const TrainConfig& c, const Dataset& dataset, const SyntheticWorld* world) {
  if (c.batch_size < 2) throw ConfigError("train: batch_size must be >= 2 (InfoNCE needs negatives)");
  if (c.steps < 1) throw ConfigError("train: steps must be >= 1");
  if (!(c.temperature > 0.0)) throw ConfigError("train: temperature must be positive");
  if (c.lambda < 0.0) throw ConfigError("train: lambda must be >= 0");
  if (dataset.size() < c.batch_size) throw ConfigError("train: dataset smaller than one batch");
  if (c.encoder.input_dim != dataset.dim()) {
    throw ConfigError("train: encoder input dim does not match the dataset");
  }
  if (c.head.kind == HeadKind::identity && c.lambda > 0.0) {
    throw ConfigError("train: identity head requires lambda == 0");
  }
  if (c.augmentation.kind == AugmentationKind::latent_nuisance &&
      (world == nullptr || !dataset.has_latents())) {
    throw ConfigError("train: latent augmentation needs a synthetic world with stored latents");
  }
  if (c.task_count > 0) {
    if (world == nullptr) throw ConfigError("train: task mode needs a synthetic world");
    if (c.augmentation.kind != AugmentationKind::latent_nuisance) {
      throw ConfigError("train: task mode needs the latent-nuisance rule");
    }
  }
}

std::size_t active_column_count(const ModelState& model, double zero_threshold) {
  if (model.head_spec().kind == HeadKind::identity) return model.head_spec().input_dim;
  return column_support(model.regularized_matrix(), zero_threshold).size();
}

Tensor eval_rows(const Dataset& dataset, std::size_t max_rows) {
  const std::size_t n = std::min(dataset.size(), max_rows);
  const std::size_t d = dataset.dim();
  std::vector<double> v(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] = dataset.features.at(i, j);
  return Tensor::from_data({n, d}, std::move(v));
}

}  // namespace

std::uint64_t hash_train_config(const TrainConfig& config) {
  return fnv1a(canonical_config_string(config));
}

TrainResult train(const TrainConfig& config, const Dataset& dataset, const SyntheticWorld* world) {
  validate(config, dataset, world);

  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t diag_every =
      config.diag_every > 0 ? config.diag_every : std::max<std::size_t>(config.steps / 20, 1);

  ModelState model = ModelState::init(config.encoder, config.head, Rng::mix(config.seed, 1));
  const bool has_reg_matrix = config.head.kind != HeadKind::identity;
  const bool proximal = config.sparsity_mode == SparsityMode::proximal;
  const bool prox_active = proximal && config.lambda > 0.0 && has_reg_matrix;

  AdamConfig adam;
  adam.lr = config.lr;
  adam.weight_decay = config.weight_decay;
  AdamOptimizer opt(model.parameters(), adam);
  if (prox_active) opt.set_decay_exempt(model.regularized_matrix());

  Rng perm_rng(Rng::mix(config.seed, 2));
  Rng aug_rng(Rng::mix(config.seed, 3));
  Rng task_rng(Rng::mix(config.seed, 4));

  std::vector<std::vector<std::size_t>> task_supports;
  if (config.task_count > 0) {
    task_supports =
        sample_task_supports(world->config().latent_dim, config.task_count, config.task_min_size,
                             config.task_max_size, Rng::mix(config.seed, 5));
  }

  RunRecord record;
  record.config_hash = hash_train_config(config);

  // The regularized objective normalizes the likelihood per anchor; with the
  // loss kept as a sum over the 2N anchors, the equivalent regularizer weight
  // carries the anchor count.
  const double lambda_eff = config.lambda * 2.0 * static_cast<double>(config.batch_size);
  const SparsityConfig sparsity{config.lambda, config.sparsity_mode, 1e-8};
  const Tensor eval_x = eval_rows(dataset, config.diag_max_rows);

  std::vector<std::size_t> order = perm_rng.permutation(dataset.size());
  std::size_t cursor = 0;

  try {
    for (std::size_t step = 1; step <= config.steps; ++step) {
      if (cursor + config.batch_size > order.size()) {
        order = perm_rng.permutation(dataset.size());
        cursor = 0;
      }
      const std::span<const std::size_t> batch_idx(order.data() + cursor, config.batch_size);
      cursor += config.batch_size;

      std::span<const std::size_t> support;  // empty: the world's own subject set
      if (!task_supports.empty()) {
        support = task_supports[task_rng.integer(task_supports.size())];
      }

      Tensor views = make_views(world, dataset, batch_idx, config.augmentation, support, aug_rng);

      Tape tape;
      Tensor reps = model.encode(tape, views);
      ContrastiveBatch batch{model.project_train(tape, reps), config.temperature};

      Tensor nce = infonce(tape, batch);
      double reg_value = 0.0;
      Tensor loss = nce;
      if (!proximal && config.lambda > 0.0 && has_reg_matrix) {
        Tensor reg = scale(tape, l21_norm(tape, model.regularized_matrix()), lambda_eff);
        reg_value = reg.value();
        loss = add(tape, nce, reg);
      } else if (has_reg_matrix && config.lambda > 0.0) {
        Tape scratch;
        reg_value = lambda_eff * l21_norm(scratch, model.regularized_matrix()).value();
      }

      opt.zero_grad();
      backward(loss, tape);

      const double lr_t =
          config.cosine_lr
              ? config.lr * 0.5 *
                    (1.0 + std::cos(std::numbers::pi * static_cast<double>(step - 1) /
                                    static_cast<double>(config.steps)))
              : config.lr;
      opt.step(lr_t);
      if (prox_active) {
        Tensor w = model.regularized_matrix();
        prox_l21_inplace(w, lr_t * lambda_eff);
      }

      record.loss_infonce.push_back(nce.value());
      record.loss_reg.push_back(reg_value);
      record.steps_completed = step;

      if (step % diag_every == 0 || step == config.steps) {
        Tape diag_tape;
        Tensor r = model.encode(diag_tape, eval_x);
        Tensor z = model.project(diag_tape, r);
        StepLog log;
        log.step = step;
        log.loss_infonce = nce.value();
        log.loss_reg = reg_value;
        log.active_cols = active_column_count(model, sparsity.zero_threshold);
        log.erank_r = effective_rank(symmetric_evd(covariance(r)).eigenvalues).count;
        log.erank_z = effective_rank(symmetric_evd(covariance(z)).eigenvalues).count;
        record.logged.push_back(log);
      }
    }
  } catch (const NumericError& e) {
    record.diverged = true;
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    throw DivergenceError(std::string("train: diverged: ") + e.what(), record);
  }

  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(model), std::move(record)};
}

void write_metrics_jsonl(std::ostream& os, const RunRecord& record) {
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const StepLog& log : record.logged) {
    os << "{\"step\":" << log.step << ",\"loss_infonce\":" << num(log.loss_infonce)
       << ",\"loss_reg\":" << num(log.loss_reg) << ",\"active_cols\":" << log.active_cols
       << ",\"erank_r\":" << log.erank_r << ",\"erank_z\":" << log.erank_z << "}\n";
  }
}

DiagnosticsSnapshot snapshot_diagnostics(const ModelState& model, const Tensor& eval_x) {
  if (eval_x.rank() != 2 || eval_x.rows() == 0) {
    throw ContractError("diagnostics: nonempty evaluation set required");
  }
  Tape tape;
  Tensor r = model.encode(tape, eval_x);
  Tensor z = model.project(tape, r);

  DiagnosticsSnapshot snap;
  snap.spectrum = spectrum_report(r, z);

  const std::size_t n = z.rows(), m = z.cols();
  const std::size_t n_anchors = std::min<std::size_t>(n, 512);
  double total = 0.0;
  for (std::size_t a = 0; a < n_anchors; ++a) {
    std::vector<double> anchor(m);
    for (std::size_t j = 0; j < m; ++j) anchor[j] = z.at(a, j);
    Tensor others = Tensor::zeros({n - 1, m});
    std::size_t row = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == a) continue;
      for (std::size_t j = 0; j < m; ++j) others.at(row, j) = z.at(i, j);
      ++row;
    }
    try {
      total += minmax_ratio(anchor, others);
      snap.embedding_minmax.anchors += 1;
    } catch (const DegenerateInputError&) {
      snap.embedding_minmax.degenerate += 1;
    }
  }
  if (snap.embedding_minmax.anchors == 0) {
    throw DegenerateInputError("diagnostics: every anchor duplicates another embedding");
  }
  snap.embedding_minmax.mean = total / static_cast<double>(snap.embedding_minmax.anchors);
  return snap;
}

}  // namespace sparsehead
