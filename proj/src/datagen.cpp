#include "sparsehead/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "sparsehead/analysis.hpp"
#include "sparsehead/errors.hpp"
#include "wire.hpp"

namespace sparsehead {

namespace {

Tensor gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = scale * rng.gaussian();
  return Tensor::from_data({rows, cols}, std::move(v));
}

/// Condition number of a tall matrix via the eigenvalues of G^T G.
double condition_number(const Tensor& g) {
  const std::size_t rows = g.rows(), cols = g.cols();
  Tensor gram = Tensor::zeros({cols, cols});
  for (std::size_t a = 0; a < cols; ++a)
    for (std::size_t b = a; b < cols; ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < rows; ++k) s += g.at(k, a) * g.at(k, b);
      gram.at(a, b) = s;
      gram.at(b, a) = s;
    }
  const Evd evd = symmetric_evd(gram);
  const double lmax = evd.eigenvalues.front(), lmin = evd.eigenvalues.back();
  if (lmin <= 0.0) return std::numeric_limits<double>::infinity();
  return std::sqrt(lmax / lmin);
}

/// Left pseudo-inverse (G^T G)^{-1} G^T of a full-column-rank matrix.
Tensor pseudo_inverse(const Tensor& g) {
  const std::size_t rows = g.rows(), cols = g.cols();
  Tensor gram = Tensor::zeros({cols, cols});
  for (std::size_t a = 0; a < cols; ++a)
    for (std::size_t b = a; b < cols; ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < rows; ++k) s += g.at(k, a) * g.at(k, b);
      gram.at(a, b) = s;
      gram.at(b, a) = s;
    }
  const Evd evd = symmetric_evd(gram);
  Tensor inv = Tensor::zeros({cols, cols});
  for (std::size_t a = 0; a < cols; ++a)
    for (std::size_t b = 0; b < cols; ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < cols; ++k) {
        s += evd.eigenvectors.at(a, k) * evd.eigenvectors.at(b, k) / evd.eigenvalues[k];
      }
      inv.at(a, b) = s;
    }
  Tensor pinv = Tensor::zeros({cols, rows});
  for (std::size_t a = 0; a < cols; ++a)
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < cols; ++k) s += inv.at(a, k) * g.at(r, k);
      pinv.at(a, r) = s;
    }
  return pinv;
}

}  // namespace

SyntheticWorld SyntheticWorld::sample(const WorldConfig& config, std::uint64_t seed) {
  if (config.latent_dim == 0 || config.obs_dim == 0) {
    throw ConfigError("world: dimensions must be >= 1");
  }
  if (config.subject_dim == 0 || config.subject_dim > config.latent_dim) {
    throw ConfigError("world: subject_dim must be in [1, latent_dim]");
  }
  if (config.decoder == DecoderKind::linear && config.latent_dim > config.obs_dim) {
    throw ConfigError("world: linear decoder needs latent_dim <= obs_dim");
  }

  SyntheticWorld w;
  w.cfg_ = config;
  w.seed_ = seed;
  for (std::size_t j = 0; j < config.latent_dim; ++j) {
    (j < config.subject_dim ? w.subject_ : w.nuisance_).push_back(j);
  }

  Rng rng(Rng::mix(seed, 0xD473));
  if (config.decoder == DecoderKind::linear) {
    const int max_attempts = 1000;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
      Tensor g = gaussian_matrix(config.obs_dim, config.latent_dim, rng,
                                 1.0 / std::sqrt(static_cast<double>(config.latent_dim)));
      const double cond = condition_number(g);
      if (cond < config.condition_limit) {
        w.mixing_ = g;
        w.pinv_ = pseudo_inverse(g);
        w.condition_ = cond;
        break;
      }
    }
    if (!w.mixing_.defined()) {
      throw AssumptionError("world: could not sample a well-conditioned mixing matrix");
    }
  } else {
    const std::size_t h = config.mlp_hidden > 0 ? config.mlp_hidden : 2 * config.latent_dim;
    const double s1 = std::sqrt(2.0 / static_cast<double>(config.latent_dim));
    const double s2 = std::sqrt(2.0 / static_cast<double>(h));
    w.mlp_w1_ = gaussian_matrix(h, config.latent_dim, rng, s1);
    w.mlp_b1_ = gaussian_matrix(1, h, rng, 0.1);
    w.mlp_w2_ = gaussian_matrix(config.obs_dim, h, rng, s2);
    w.mlp_b2_ = gaussian_matrix(1, config.obs_dim, rng, 0.1);
  }

  if (config.n_classes > 0) {
    Rng label_rng(Rng::mix(seed, 0x1ABE1));
    w.label_map_ = gaussian_matrix(config.n_classes, config.subject_dim, label_rng);
  }
  return w;
}

Tensor SyntheticWorld::decode(const Tensor& latents) const {
  if (latents.rank() != 2 || latents.cols() != cfg_.latent_dim) {
    throw DimensionError("world: latent width mismatch");
  }
  Tape tape;  // none of these tensors carry gradients; nothing is recorded
  if (cfg_.decoder == DecoderKind::linear) {
    return matmul_nt(tape, latents, mixing_);
  }
  Tensor h1 = relu(tape, add(tape, matmul_nt(tape, latents, mlp_w1_),
                             Tensor::from_data({mlp_b1_.numel()}, mlp_b1_.data())));
  return add(tape, matmul_nt(tape, h1, mlp_w2_),
             Tensor::from_data({mlp_b2_.numel()}, mlp_b2_.data()));
}

Tensor SyntheticWorld::gt_representation(const Tensor& x) const {
  if (cfg_.decoder != DecoderKind::linear) {
    throw ConfigError("world: MLP decoder has no closed inverse; use stored latents");
  }
  if (x.rank() != 2 || x.cols() != cfg_.obs_dim) {
    throw DimensionError("world: observation width mismatch");
  }
  Tape tape;
  return matmul_nt(tape, x, pinv_);
}

Dataset SyntheticWorld::sample_dataset(std::size_t n, std::uint64_t seed) const {
  Rng rng(Rng::mix(seed, 0xDA7A));
  Dataset ds;
  ds.latents = gaussian_matrix(n, cfg_.latent_dim, rng);
  ds.features = decode(ds.latents);
  if (cfg_.n_classes > 0) {
    ds.n_classes = cfg_.n_classes;
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_score = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < cfg_.n_classes; ++c) {
        double score = 0.0;
        for (std::size_t j = 0; j < cfg_.subject_dim; ++j) {
          score += label_map_.at(c, j) * ds.latents.at(i, subject_[j]);
        }
        if (score > best_score) {
          best_score = score;
          best = c;
        }
      }
      ds.labels[i] = static_cast<std::uint16_t>(best);
    }
  }
  return ds;
}

// -- task supports --------------------------------------------------------------

bool check_feature_coverage(const std::vector<std::vector<std::size_t>>& supports, std::size_t d,
                            std::vector<bool>* per_feature) {
  if (per_feature) per_feature->assign(d, false);
  bool all = true;
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<bool> covered(d, false);
    for (const auto& s : supports) {
      if (std::find(s.begin(), s.end(), j) != s.end()) continue;
      for (std::size_t f : s) covered[f] = true;
    }
    bool ok = true;
    for (std::size_t f = 0; f < d; ++f) {
      if (f != j && !covered[f]) ok = false;
    }
    if (per_feature) (*per_feature)[j] = ok;
    all = all && ok;
  }
  return all;
}

std::vector<std::vector<std::size_t>> sample_task_supports(std::size_t d, std::size_t n_tasks,
                                                           std::size_t min_size,
                                                           std::size_t max_size,
                                                           std::uint64_t seed) {
  if (min_size < 1 || min_size > max_size || max_size >= d) {
    throw ConfigError("task supports: need 1 <= min_size <= max_size < d");
  }
  if (n_tasks == 0) throw ConfigError("task supports: need at least one task");

  Rng rng(Rng::mix(seed, 0x5A5B));
  constexpr int kMaxResamples = 10000;
  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    std::vector<std::vector<std::size_t>> supports;
    for (std::size_t t = 0; t < n_tasks; ++t) {
      const std::size_t size = min_size + rng.integer(max_size - min_size + 1);
      std::vector<std::size_t> perm = rng.permutation(d);
      std::vector<std::size_t> s(perm.begin(), perm.begin() + size);
      std::sort(s.begin(), s.end());
      supports.push_back(std::move(s));
    }
    if (check_feature_coverage(supports, d, nullptr)) return supports;
  }
  throw AssumptionError("task supports: coverage condition unattainable after 10^4 resamples");
}

std::vector<TaskSpec> sample_tasks(std::size_t d, std::size_t m, std::size_t n_tasks,
                                   std::size_t min_size, std::size_t max_size,
                                   std::uint64_t seed) {
  const auto supports = sample_task_supports(d, n_tasks, min_size, max_size, seed);
  Rng rng(Rng::mix(seed, 0x6EAD));
  std::vector<TaskSpec> tasks;
  for (const auto& s : supports) {
    TaskSpec t;
    t.support = s;
    t.head = Tensor::zeros({m, d});
    for (std::size_t j : s) {
      for (std::size_t i = 0; i < m; ++i) t.head.at(i, j) = rng.gaussian();
    }
    tasks.push_back(std::move(t));
  }
  return tasks;
}

AssumptionReport check_assumptions(const std::vector<TaskSpec>& tasks, std::size_t d) {
  AssumptionReport rep;
  if (tasks.empty()) {
    rep.vacuous = true;
    return rep;
  }

  std::vector<std::vector<std::size_t>> supports;
  for (const auto& t : tasks) supports.push_back(t.support);
  rep.coverage_pass = check_feature_coverage(supports, d, &rep.feature_covered);

  // sufficient-variance proxy: stack the support-restricted head rows of all
  // tasks sharing a support; its smallest singular value must clear 1e-6
  std::map<std::vector<std::size_t>, std::vector<const TaskSpec*>> by_support;
  for (const auto& t : tasks) by_support[t.support].push_back(&t);

  rep.variance_pass = true;
  for (const auto& [support, group] : by_support) {
    const std::size_t k = support.size();
    std::size_t total_rows = 0;
    for (const TaskSpec* t : group) total_rows += t->head.rows();

    Tensor stacked = Tensor::zeros({total_rows, k});
    std::size_t row = 0;
    for (const TaskSpec* t : group) {
      for (std::size_t i = 0; i < t->head.rows(); ++i, ++row) {
        for (std::size_t c = 0; c < k; ++c) stacked.at(row, c) = t->head.at(i, support[c]);
      }
    }

    Tensor gram = Tensor::zeros({k, k});
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = a; b < k; ++b) {
        double s = 0.0;
        for (std::size_t r = 0; r < total_rows; ++r) s += stacked.at(r, a) * stacked.at(r, b);
        gram.at(a, b) = s;
        gram.at(b, a) = s;
      }
    const Evd evd = symmetric_evd(gram);
    const double sigma_min =
        total_rows < k ? 0.0 : std::sqrt(std::max(0.0, evd.eigenvalues.back()));
    rep.support_sigma_min.emplace_back(support, sigma_min);
    if (sigma_min <= 1e-6) rep.variance_pass = false;
  }
  return rep;
}

// -- augmentation ----------------------------------------------------------------

namespace {

Tensor latent_views(const SyntheticWorld& world, const Dataset& dataset,
                    std::span<const std::size_t> indices, double noise_scale,
                    std::span<const std::size_t> subject, Rng& rng) {
  const std::size_t n = indices.size();
  const std::size_t d_latent = world.config().latent_dim;
  std::vector<bool> is_subject(d_latent, false);
  for (std::size_t j : subject) {
    if (j >= d_latent) throw ConfigError("augmentation: subject index out of range");
    is_subject[j] = true;
  }

  Tensor view_latents = Tensor::zeros({2 * n, d_latent});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = indices[i];
    for (int view = 0; view < 2; ++view) {
      const std::size_t row = 2 * i + view;
      for (std::size_t j = 0; j < d_latent; ++j) {
        view_latents.at(row, j) =
            is_subject[j] ? dataset.latents.at(src, j) : noise_scale * rng.gaussian();
      }
    }
  }
  return world.decode(view_latents);
}

Tensor pixel_views(const Dataset& dataset, std::span<const std::size_t> indices,
                   const AugmentationRule& rule, Rng& rng) {
  const std::size_t h = dataset.image_height, w = dataset.image_width, c = dataset.image_channels;
  const std::size_t dim = dataset.dim();
  Tensor out = Tensor::zeros({2 * indices.size(), dim});

  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    for (int view = 0; view < 2; ++view) {
      const std::size_t row = 2 * i + view;
      for (std::size_t k = 0; k < dim; ++k) out.at(row, k) = dataset.features.at(src, k);

      if (rng.bernoulli(rule.flip_prob)) {  // horizontal mirror, channel-major
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w / 2; ++x) {
              const std::size_t a = ch * h * w + y * w + x;
              const std::size_t b = ch * h * w + y * w + (w - 1 - x);
              std::swap(out.at(row, a), out.at(row, b));
            }
      }
      if (rule.mask_size > 0) {
        const std::size_t mh = std::min(rule.mask_size, h), mw = std::min(rule.mask_size, w);
        const std::size_t y0 = rng.integer(h - mh + 1), x0 = rng.integer(w - mw + 1);
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = y0; y < y0 + mh; ++y)
            for (std::size_t x = x0; x < x0 + mw; ++x) out.at(row, ch * h * w + y * w + x) = 0.0;
      }
      if (rule.noise_scale > 0.0) {
        for (std::size_t k = 0; k < dim; ++k) out.at(row, k) += rule.noise_scale * rng.gaussian();
      }
    }
  }
  return out;
}

}  // namespace

Tensor make_views(const SyntheticWorld* world, const Dataset& dataset,
                  std::span<const std::size_t> indices, const AugmentationRule& rule,
                  std::span<const std::size_t> subject_override, Rng& rng) {
  for (std::size_t i : indices) {
    if (i >= dataset.size()) throw DimensionError("make_views: index out of range");
  }
  switch (rule.kind) {
    case AugmentationKind::latent_nuisance: {
      if (world == nullptr || !dataset.has_latents()) {
        throw ConfigError("make_views: latent rule needs a synthetic world with stored latents");
      }
      const std::span<const std::size_t> subject =
          subject_override.empty() ? world->subject_set() : subject_override;
      return latent_views(*world, dataset, indices, rule.noise_scale, subject, rng);
    }
    case AugmentationKind::pixel: {
      if (!dataset.has_image_shape()) {
        throw ConfigError("make_views: pixel rule needs image-shaped data");
      }
      return pixel_views(dataset, indices, rule, rng);
    }
  }
  throw ContractError("make_views: unreachable rule kind");
}

// -- file formats ------------------------------------------------------------------

namespace {
constexpr char kTdsMagic[4] = {'T', 'D', 'S', '1'};
}

void save_tds(const std::string& path, const Dataset& dataset) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("tds: cannot open for writing: " + path);
  os.write(kTdsMagic, 4);
  wire::put_u32(os, static_cast<std::uint32_t>(dataset.size()));
  wire::put_u32(os, static_cast<std::uint32_t>(dataset.dim()));
  wire::put_u32(os, dataset.n_classes);
  for (double v : dataset.features.data()) wire::put_f64(os, v);
  if (dataset.n_classes > 0) {
    if (dataset.labels.size() != dataset.size()) {
      throw FormatError("tds: label count does not match row count");
    }
    for (std::uint16_t l : dataset.labels) wire::put_u16(os, l);
  }
  if (!os) throw FormatError("tds: write failed: " + path);
}

Dataset load_tds(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("tds: cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kTdsMagic, 4) != 0) {
    throw FormatError("tds: bad magic");
  }
  const std::uint32_t n = wire::get_u32(is, "tds");
  const std::uint32_t dim = wire::get_u32(is, "tds");
  const std::uint32_t n_classes = wire::get_u32(is, "tds");

  Dataset ds;
  ds.n_classes = n_classes;
  std::vector<double> data(static_cast<std::size_t>(n) * dim);
  for (double& v : data) v = wire::get_f64(is, "tds");
  ds.features = Tensor::from_data({n, dim}, std::move(data));
  if (n_classes > 0) {
    ds.labels.resize(n);
    for (auto& l : ds.labels) {
      l = wire::get_u16(is, "tds");
      if (l >= n_classes) throw FormatError("tds: label out of range");
    }
  }
  return ds;
}

Dataset import_raw_images(const std::string& path, const RawImageLayout& layout) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw FormatError("raw import: cannot open: " + path);
  const std::streamoff file_size = is.tellg();
  is.seekg(0);

  const std::size_t pixels = layout.height * layout.width * layout.channels;
  const std::size_t record = 1 + pixels;
  if (file_size <= 0 || static_cast<std::size_t>(file_size) % record != 0) {
    throw FormatError("raw import: file size is not a whole number of records");
  }
  const std::size_t n = static_cast<std::size_t>(file_size) / record;

  Dataset ds;
  ds.n_classes = layout.n_classes;
  ds.labels.resize(n);
  ds.image_height = layout.height;
  ds.image_width = layout.width;
  ds.image_channels = layout.channels;
  std::vector<double> data(n * pixels);
  std::vector<unsigned char> buf(record);
  for (std::size_t i = 0; i < n; ++i) {
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record))) {
      throw FormatError("raw import: truncated file");
    }
    if (buf[0] >= layout.n_classes) throw FormatError("raw import: label out of range");
    ds.labels[i] = buf[0];
    for (std::size_t k = 0; k < pixels; ++k) data[i * pixels + k] = buf[1 + k] / 255.0;
  }
  ds.features = Tensor::from_data({n, pixels}, std::move(data));
  return ds;
}

}  // namespace sparsehead
