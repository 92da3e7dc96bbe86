#include "sparsehead/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "sparsehead/errors.hpp"
#include "sparsehead/rng.hpp"
#include "wire.hpp"

namespace sparsehead {

const char* head_kind_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::identity: return "identity";
    case HeadKind::linear: return "linear";
    case HeadKind::nonlinear: return "nonlinear";
  }
  return "?";
}

HeadKind head_kind_from_name(const std::string& name) {
  if (name == "identity") return HeadKind::identity;
  if (name == "linear") return HeadKind::linear;
  if (name == "nonlinear") return HeadKind::nonlinear;
  throw ConfigError("unknown head kind: " + name);
}

namespace {

void validate_specs(const EncoderSpec& enc, const HeadSpec& head) {
  if (enc.input_dim == 0 || enc.output_dim == 0) {
    throw ConfigError("encoder spec: dimensions must be >= 1");
  }
  for (std::size_t h : enc.hidden) {
    if (h == 0) throw ConfigError("encoder spec: hidden widths must be >= 1");
  }
  if (head.input_dim != enc.output_dim) {
    throw ConfigError("head input dim must equal encoder output dim");
  }
  if (head.output_dim == 0) throw ConfigError("head spec: output dim must be >= 1");
  if (head.kind == HeadKind::identity && head.output_dim != head.input_dim) {
    throw ConfigError("identity head requires m == d");
  }
}

std::size_t head_hidden_width(const HeadSpec& head) {
  return head.hidden > 0 ? head.hidden : head.input_dim;
}

Tensor glorot_uniform(std::size_t fan_out, std::size_t fan_in, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_out * fan_in);
  for (auto& v : w) v = rng.uniform(-s, s);
  return Tensor::from_data({fan_out, fan_in}, std::move(w), true);
}

}  // namespace

ModelState ModelState::init(const EncoderSpec& enc, const HeadSpec& head, std::uint64_t seed) {
  validate_specs(enc, head);

  ModelState m;
  m.enc_ = enc;
  m.head_ = head;
  Rng rng(seed);

  std::vector<std::size_t> widths;
  widths.push_back(enc.input_dim);
  widths.insert(widths.end(), enc.hidden.begin(), enc.hidden.end());
  widths.push_back(enc.output_dim);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    m.enc_w_.push_back(glorot_uniform(widths[l + 1], widths[l], rng));
    m.enc_b_.push_back(Tensor::zeros({widths[l + 1]}, true));
  }

  switch (head.kind) {
    case HeadKind::identity:
      break;
    case HeadKind::linear:
      m.head_w_.push_back(glorot_uniform(head.output_dim, head.input_dim, rng));
      break;
    case HeadKind::nonlinear: {
      const std::size_t h = head_hidden_width(head);
      m.head_w_.push_back(glorot_uniform(h, head.input_dim, rng));
      m.head_b_.push_back(Tensor::zeros({h}, true));
      m.head_w_.push_back(glorot_uniform(head.output_dim, h, rng));
      m.head_b_.push_back(Tensor::zeros({head.output_dim}, true));
      if (head.standardize) {
        m.run_mean_ = Tensor::zeros({h});
        m.run_var_ = Tensor::full({h}, 1.0);
      }
      break;
    }
  }
  return m;
}

Tensor ModelState::encode(Tape& tape, const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != enc_.input_dim) {
    throw DimensionError("encode: input width does not match encoder spec");
  }
  Tensor h = x;
  for (std::size_t l = 0; l < enc_w_.size(); ++l) {
    h = add(tape, matmul_nt(tape, h, enc_w_[l]), enc_b_[l]);
    if (l + 1 < enc_w_.size()) h = relu(tape, h);
  }
  return h;
}

Tensor ModelState::project(Tape& tape, const Tensor& r) const {
  return const_cast<ModelState*>(this)->head_forward(tape, r, false);
}

Tensor ModelState::project_train(Tape& tape, const Tensor& r) {
  return head_forward(tape, r, true);
}

Tensor ModelState::head_forward(Tape& tape, const Tensor& r, bool update_stats) {
  if (r.rank() != 2 || r.cols() != head_.input_dim) {
    throw DimensionError("project: input width does not match head spec");
  }
  switch (head_.kind) {
    case HeadKind::identity:
      return r;
    case HeadKind::linear:
      return matmul_nt(tape, r, head_w_[0]);
    case HeadKind::nonlinear: {
      Tensor a1 = add(tape, matmul_nt(tape, r, head_w_[0]), head_b_[0]);
      if (head_.standardize) {
        const std::size_t h = a1.cols(), n = a1.rows();
        if (update_stats && n > 0) {
          // running stats, momentum 0.1, population variance
          for (std::size_t j = 0; j < h; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += a1.at(i, j);
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              const double d = a1.at(i, j) - mean;
              var += d * d;
            }
            var /= static_cast<double>(n);
            run_mean_.at(j) = 0.9 * run_mean_.at(j) + 0.1 * mean;
            run_var_.at(j) = 0.9 * run_var_.at(j) + 0.1 * var;
          }
        }
        std::vector<double> inv_std(h);
        for (std::size_t j = 0; j < h; ++j) inv_std[j] = 1.0 / std::sqrt(run_var_.at(j) + 1e-5);
        a1 = mul(tape, sub(tape, a1, run_mean_.clone()), Tensor::from_data({h}, inv_std));
      }
      Tensor h1 = relu(tape, a1);
      return add(tape, matmul_nt(tape, h1, head_w_[1]), head_b_[1]);
    }
  }
  throw ContractError("project: unreachable head kind");
}

Tensor ModelState::regularized_matrix() const {
  switch (head_.kind) {
    case HeadKind::identity:
      throw ConfigError("regularized_matrix: identity head has no head matrix");
    case HeadKind::linear:
      return head_w_[0];
    case HeadKind::nonlinear:
      return head_w_[1];
  }
  throw ContractError("regularized_matrix: unreachable head kind");
}

std::vector<Tensor> ModelState::parameters() const {
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < enc_w_.size(); ++l) {
    out.push_back(enc_w_[l]);
    out.push_back(enc_b_[l]);
  }
  for (std::size_t l = 0; l < head_w_.size(); ++l) {
    out.push_back(head_w_[l]);
    if (l < head_b_.size()) out.push_back(head_b_[l]);
  }
  return out;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& p : parameters()) n += p.numel();
  return n;
}

std::vector<Tensor> ModelState::all_blobs() const {
  std::vector<Tensor> blobs = parameters();
  if (head_.standardize) {
    blobs.push_back(run_mean_);
    blobs.push_back(run_var_);
  }
  return blobs;
}

ModelState ModelState::from_blobs(const EncoderSpec& enc, const HeadSpec& head,
                                  const std::vector<Tensor>& blobs) {
  ModelState m = init(enc, head, 0);
  const std::vector<Tensor> expect = m.all_blobs();
  if (blobs.size() != expect.size()) {
    throw FormatError("checkpoint: blob count does not match model spec");
  }
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    if (blobs[i].shape() != expect[i].shape()) {
      throw FormatError("checkpoint: blob shape does not match model spec");
    }
    Tensor dst = expect[i];
    dst.data() = blobs[i].data();
  }
  return m;
}

ModelState ModelState::deep_copy() const {
  std::vector<Tensor> blobs;
  for (const Tensor& b : all_blobs()) blobs.push_back(b.clone());
  return from_blobs(enc_, head_, blobs);
}

// -- SPHD checkpoint ----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'P', 'H', 'D'};
constexpr std::uint32_t kVersion = 1;

using wire::put_f64;
using wire::put_u32;
using wire::put_u64;

std::uint32_t get_u32(std::istream& is) { return wire::get_u32(is, "checkpoint"); }
std::uint64_t get_u64(std::istream& is) { return wire::get_u64(is, "checkpoint"); }
double get_f64(std::istream& is) { return wire::get_f64(is, "checkpoint"); }

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot open for writing: " + path);

  os.write(kMagic, 4);
  put_u32(os, kVersion);

  const EncoderSpec& enc = model.encoder_spec();
  put_u32(os, static_cast<std::uint32_t>(enc.input_dim));
  put_u32(os, static_cast<std::uint32_t>(enc.hidden.size()));
  for (std::size_t h : enc.hidden) put_u32(os, static_cast<std::uint32_t>(h));
  put_u32(os, static_cast<std::uint32_t>(enc.output_dim));

  const HeadSpec& head = model.head_spec();
  put_u32(os, static_cast<std::uint32_t>(head.kind));
  put_u32(os, static_cast<std::uint32_t>(head.input_dim));
  put_u32(os, static_cast<std::uint32_t>(head.output_dim));
  put_u32(os, static_cast<std::uint32_t>(head.hidden));
  put_u32(os, head.standardize ? 1 : 0);

  const std::vector<Tensor> blobs = model.all_blobs();
  put_u32(os, static_cast<std::uint32_t>(blobs.size()));
  for (const Tensor& b : blobs) {
    put_u32(os, static_cast<std::uint32_t>(b.rank()));
    for (std::size_t d : b.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    put_u64(os, b.numel());
    for (double v : b.data()) put_f64(os, v);
  }
  if (!os) throw FormatError("checkpoint: write failed: " + path);
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open: " + path);

  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  const std::uint32_t version = get_u32(is);
  if (version != kVersion) throw FormatError("checkpoint: unsupported version");

  EncoderSpec enc;
  enc.input_dim = get_u32(is);
  const std::uint32_t n_hidden = get_u32(is);
  for (std::uint32_t i = 0; i < n_hidden; ++i) enc.hidden.push_back(get_u32(is));
  enc.output_dim = get_u32(is);

  HeadSpec head;
  const std::uint32_t kind = get_u32(is);
  if (kind > 2) throw FormatError("checkpoint: bad head kind");
  head.kind = static_cast<HeadKind>(kind);
  head.input_dim = get_u32(is);
  head.output_dim = get_u32(is);
  head.hidden = get_u32(is);
  head.standardize = get_u32(is) != 0;

  const std::uint32_t n_blobs = get_u32(is);
  std::vector<Tensor> blobs;
  for (std::uint32_t i = 0; i < n_blobs; ++i) {
    const std::uint32_t rank = get_u32(is);
    if (rank > 2) throw FormatError("checkpoint: bad blob rank");
    std::vector<std::size_t> shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(get_u32(is));
    const std::uint64_t len = get_u64(is);
    std::vector<double> data(len);
    for (std::uint64_t j = 0; j < len; ++j) data[j] = get_f64(is);
    blobs.push_back(Tensor::from_data(std::move(shape), std::move(data)));
  }
  return ModelState::from_blobs(enc, head, blobs);
}

}  // namespace sparsehead
