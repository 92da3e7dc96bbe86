#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sparsehead/rng.hpp"
#include "sparsehead/tensor.hpp"

namespace sparsehead {

/// In-memory dataset: feature rows, optional labels, and (for synthetic
/// worlds) the generating latents. Immutable after construction, safe to
/// share read-only.
struct Dataset {
  Tensor features;                    // [n x dim]
  std::vector<std::uint16_t> labels;  // empty when unlabeled
  std::uint32_t n_classes = 0;
  Tensor latents;  // [n x d*] for synthetic data, undefined otherwise
  std::size_t image_height = 0, image_width = 0, image_channels = 0;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  bool has_labels() const { return n_classes > 0; }
  bool has_latents() const { return latents.defined(); }
  bool has_image_shape() const { return image_channels > 0; }
};

enum class DecoderKind { linear, mlp };

struct WorldConfig {
  std::size_t latent_dim = 16;   // d*
  std::size_t obs_dim = 32;      // X
  std::size_t subject_dim = 8;   // leading latent coordinates shared by views
  DecoderKind decoder = DecoderKind::linear;
  std::size_t mlp_hidden = 0;    // decoder hidden width; 0 means 2 * latent_dim
  double condition_limit = 100.0;
  std::uint32_t n_classes = 0;   // label subject latents through a random map
};

/// Ground-truth generative model: unit-gaussian latents pushed through an
/// invertible map g into observation space. The subject coordinates are the
/// content shared between augmented views; the nuisance complement is
/// resampled per view.
class SyntheticWorld {
 public:
  static SyntheticWorld sample(const WorldConfig& config, std::uint64_t seed);

  const WorldConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  std::span<const std::size_t> subject_set() const { return subject_; }
  std::span<const std::size_t> nuisance_set() const { return nuisance_; }
  double mixing_condition() const { return condition_; }

  /// latents [n x d*] -> observations [n x X]
  Tensor decode(const Tensor& latents) const;

  /// Linear worlds recover the generating latent exactly (pseudo-inverse);
  /// MLP worlds have no closed inverse, use the dataset's stored latents.
  Tensor gt_representation(const Tensor& x) const;

  /// n fresh samples with stored latents; labels (if n_classes > 0) are the
  /// argmax of a fixed random linear map of the subject latents.
  Dataset sample_dataset(std::size_t n, std::uint64_t seed) const;

 private:
  WorldConfig cfg_;
  std::uint64_t seed_ = 0;
  std::vector<std::size_t> subject_, nuisance_;
  Tensor mixing_;      // [X x d*] (linear decoder)
  Tensor pinv_;        // [d* x X] (linear decoder)
  Tensor mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;  // mlp decoder
  Tensor label_map_;   // [n_classes x subject_dim]
  double condition_ = 0.0;
};

/// A task in the multi-task reading of contrastive learning: a feature
/// support, a head whose columns are nonzero exactly on the support, and the
/// batch it applies to (assigned by the training loop).
struct TaskSpec {
  std::vector<std::size_t> support;
  Tensor head;  // [m x d]
  std::vector<std::size_t> batch_indices;
};

/// Supports of uniform random size in [min_size, max_size], resampled until
/// the non-trivial-feature coverage condition holds: for every feature j,
/// the union of supports excluding j covers all other features.
std::vector<std::vector<std::size_t>> sample_task_supports(std::size_t d, std::size_t n_tasks,
                                                           std::size_t min_size,
                                                           std::size_t max_size,
                                                           std::uint64_t seed);

/// sample_task_supports plus gaussian heads restricted to each support.
std::vector<TaskSpec> sample_tasks(std::size_t d, std::size_t m, std::size_t n_tasks,
                                   std::size_t min_size, std::size_t max_size,
                                   std::uint64_t seed);

/// Exact set-arithmetic check of the coverage condition.
bool check_feature_coverage(const std::vector<std::vector<std::size_t>>& supports, std::size_t d,
                            std::vector<bool>* per_feature = nullptr);

struct AssumptionReport {
  bool vacuous = false;          // no tasks at all
  bool coverage_pass = false;    // non-trivial-feature condition
  std::vector<bool> feature_covered;
  bool variance_pass = false;    // sufficient-variance proxy
  // per distinct support: smallest singular value of the stacked restricted
  // heads (must exceed 1e-6)
  std::vector<std::pair<std::vector<std::size_t>, double>> support_sigma_min;
};

/// Report-only check of the two support assumptions over a task list.
AssumptionReport check_assumptions(const std::vector<TaskSpec>& tasks, std::size_t d);

enum class AugmentationKind { latent_nuisance, pixel };

struct AugmentationRule {
  AugmentationKind kind = AugmentationKind::latent_nuisance;
  double noise_scale = 1.0;  // nuisance resample scale / pixel jitter scale
  double flip_prob = 0.5;    // pixel rule
  std::size_t mask_size = 4; // pixel rule, square patch edge
};

/// Two views per selected sample, interleaved: rows 2i and 2i+1 of the result
/// are the views of indices[i]. The latent rule keeps subject latents
/// bit-identical across views and resamples the complement at noise_scale;
/// subject_override (when nonempty) replaces the world's subject set for this
/// batch. The pixel rule needs image geometry on the dataset.
Tensor make_views(const SyntheticWorld* world, const Dataset& dataset,
                  std::span<const std::size_t> indices, const AugmentationRule& rule,
                  std::span<const std::size_t> subject_override, Rng& rng);

// TDS tensor-dataset file format: magic "TDS1", u32 count, u32 dim,
// u32 n_classes (0 = unlabeled), count*dim little-endian f64, then (if
// labeled) count u16 labels.
void save_tds(const std::string& path, const Dataset& dataset);
Dataset load_tds(const std::string& path);

/// Raw image-batch import: per record one label byte then
/// height*width*channels channel-major pixel bytes, scaled to [0, 1].
struct RawImageLayout {
  std::size_t height = 32, width = 32, channels = 3;
  std::uint32_t n_classes = 10;
};
Dataset import_raw_images(const std::string& path, const RawImageLayout& layout = {});

}  // namespace sparsehead
