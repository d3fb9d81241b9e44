#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "madmil/autodiff.hpp"
#include "madmil/tensor.hpp"

namespace madmil {

enum class Aggregator { abmil, madmil, mean_pool, max_pool };

std::string_view to_string(Aggregator kind);
Aggregator parse_aggregator(std::string_view name);

/// Architecture of one MIL model: compress (input_dim -> D, ReLU), aggregate
/// over instances, classify (D -> C). Parameter shapes, counts and FLOPs are
/// all derived from this.
struct ModelConfig {
  std::size_t input_dim = 784;
  std::size_t embed_dim = 128;
  std::size_t heads = 1;
  std::size_t classes = 2;
  Aggregator aggregator = Aggregator::madmil;
  /// Attention hidden width. Unset means 256 for abmil and ⌈d_m/2⌉ per head
  /// for madmil.
  std::optional<std::size_t> attention_hidden;

  static constexpr std::size_t kAbmilHidden = 256;

  void validate() const;

  bool uses_attention() const {
    return aggregator == Aggregator::abmil || aggregator == Aggregator::madmil;
  }
  /// Number of attention heads actually built: 0 for pooling, 1 for abmil.
  std::size_t head_count() const;
  /// Per-head slice width ⌈D/M⌉.
  std::size_t head_width() const;
  /// Per-head attention hidden width.
  std::size_t head_hidden() const;
  /// Width the split operates on, M·⌈D/M⌉ (≥ D).
  std::size_t padded_width() const { return head_count() * head_width(); }
  /// Classifier input width. The zero-padding columns aggregate to zero and are
  /// dropped after concatenation, so this is always D.
  std::size_t output_width() const { return embed_dim; }

  std::string label() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// One gated attention module: score(f) = wᵀ(tanh(V f + b_V) ⊙ sigm(U f + b_U)) + b_w.
struct GatedAttentionHead {
  Tensor V;    // a×d
  Tensor U;    // a×d
  Tensor w;    // a×1
  Tensor b_V;  // 1×a
  Tensor b_U;  // 1×a
  Tensor b_w;  // 1×1

  friend bool operator==(const GatedAttentionHead&, const GatedAttentionHead&) = default;
};

struct ModelParams {
  Tensor compress_weight;  // D×input_dim
  Tensor compress_bias;    // 1×D
  std::vector<GatedAttentionHead> heads;
  Tensor classifier_weight;  // C×D
  Tensor classifier_bias;    // 1×C

  /// Every parameter tensor in a fixed order (compression, heads in order with
  /// V, U, w, b_V, b_U, b_w, classifier). Optimizer state follows this order.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  /// Number of scalars actually allocated.
  std::size_t scalar_count() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Xavier-uniform weights in ±√(6/(fan_in+fan_out)), zero biases.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Same shapes as init_params, every entry zero.
ModelParams zero_params(const ModelConfig& config);

/// Throws ConfigError unless every tensor has the shape `config` implies.
void check_params(const ModelConfig& config, const ModelParams& params);

// ---------------------------------------------------------------------------
// Tape-level forward pass.

/// `V_t`, `U_t` are transpose nodes of the V, U leaves, built once per bind so
/// every bag forwarded on the same tape reuses them.
struct BoundHead {
  ad::Var V, U, w, b_V, b_U, b_w;
  ad::Var V_t, U_t;
};

/// ModelParams placed on a tape as leaves.
struct BoundModel {
  ad::Var compress_weight, compress_bias;
  ad::Var compress_weight_t;  // input_dim×D
  std::vector<BoundHead> heads;
  ad::Var classifier_weight, classifier_bias;

  /// Leaves in ModelParams::tensors() order.
  std::vector<ad::Var> leaves() const;
};

BoundHead bind_head(ad::Tape& tape, const GatedAttentionHead& head, bool requires_grad);
BoundModel bind(ad::Tape& tape, const ModelParams& params, bool requires_grad);

/// H = relu(X·Wᵀ + b), N×D.
ad::Var compress(const BoundModel& model, ad::Var X);

/// Attention weights of one head over the N rows of H (N×1, sums to 1).
ad::Var gated_attention(const BoundHead& head, ad::Var H);

/// Zero-pads H to M·⌈D/M⌉ columns and cuts it into M contiguous N×⌈D/M⌉ blocks.
std::vector<ad::Var> split_heads(ad::Var H, std::size_t heads);

struct Aggregation {
  ad::Var Z;                          // 1×D slide representation
  std::vector<ad::Var> attention;     // one N×1 column per head; empty for pooling
};

Aggregation aggregate(const ModelConfig& config, const BoundModel& model, ad::Var H);

struct ForwardPass {
  ad::Var logits;  // 1×C
  std::vector<ad::Var> attention;
};

ForwardPass forward(const ModelConfig& config, const BoundModel& model, ad::Var X);

// ---------------------------------------------------------------------------
// Convenience wrappers that own a scratch tape.

Tensor predict_logits(const ModelConfig& config, const ModelParams& params, const Tensor& X);

/// Per-head attention weights (each N×1). Empty for pooling aggregators.
std::vector<Tensor> attention_weights(const ModelConfig& config, const ModelParams& params,
                                      const Tensor& X);

/// Cross-entropy of one bag without building gradients.
double bag_loss(const ModelConfig& config, const ModelParams& params, const Tensor& X,
                std::size_t label);

}  // namespace madmil
