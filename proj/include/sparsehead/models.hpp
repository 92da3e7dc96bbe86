#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sparsehead/tensor.hpp"

namespace sparsehead {

/// MLP feature extractor: input_dim -> hidden... (relu) -> output_dim, final
/// layer affine. An empty hidden list gives a single affine map.
struct EncoderSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 0;
};

enum class HeadKind { identity, linear, nonlinear };

/// Projection head from representation space (input_dim = d) to embedding
/// space (output_dim = m). identity requires m == d; linear is a single bias-
/// free matrix; nonlinear is two affine layers with relu between, optionally
/// with a frozen-stats per-feature standardization before the relu (the
/// batch-norm stand-in, off by default).
struct HeadSpec {
  HeadKind kind = HeadKind::identity;
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::size_t hidden = 0;  // nonlinear only; 0 means input_dim
  bool standardize = false;
};

const char* head_kind_name(HeadKind kind);
HeadKind head_kind_from_name(const std::string& name);

/// Encoder and head parameters plus their specs. Parameters are Tensor
/// handles with requires_grad set; copies of a ModelState alias them, so the
/// training loop must own a state exclusively during updates. Use deep_copy()
/// for snapshots analyzed concurrently.
class ModelState {
 public:
  ModelState() = default;

  static ModelState init(const EncoderSpec& enc, const HeadSpec& head, std::uint64_t seed);

  /// x [n x input_dim] -> representations [n x output_dim], on the tape.
  Tensor encode(Tape& tape, const Tensor& x) const;

  /// r [n x d] -> embeddings [n x m]. The identity head returns r itself.
  Tensor project(Tape& tape, const Tensor& r) const;

  /// project() that also refreshes standardization running stats from the
  /// current batch (no-op unless the head standardizes). Training-loop only.
  Tensor project_train(Tape& tape, const Tensor& r);

  /// The head matrix subject to sparsity regularization: W for a linear head,
  /// the last layer's weight matrix for a nonlinear head. The returned handle
  /// aliases the live parameter. Identity heads have none.
  Tensor regularized_matrix() const;

  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  const EncoderSpec& encoder_spec() const { return enc_; }
  const HeadSpec& head_spec() const { return head_; }

  ModelState deep_copy() const;

  // Serialization hooks used by the checkpoint format.
  std::vector<Tensor> all_blobs() const;  // parameters then running stats
  static ModelState from_blobs(const EncoderSpec& enc, const HeadSpec& head,
                               const std::vector<Tensor>& blobs);

 private:
  EncoderSpec enc_;
  HeadSpec head_;
  std::vector<Tensor> enc_w_, enc_b_;
  std::vector<Tensor> head_w_, head_b_;
  Tensor run_mean_, run_var_;  // standardization buffers (not trained)

  Tensor head_forward(Tape& tape, const Tensor& r, bool update_stats);
};

// SPHD checkpoint format: magic "SPHD", format version u32, spec descriptors,
// then parameter blobs as little-endian 64-bit floats with explicit lengths.
void save_checkpoint(const std::string& path, const ModelState& model);
ModelState load_checkpoint(const std::string& path);

}  // namespace sparsehead
