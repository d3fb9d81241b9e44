#include "madmil/models.hpp"

#include <cmath>

#include "madmil/error.hpp"
#include "madmil/rng.hpp"

namespace madmil {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Stream id for parameter initialization; training shuffles use another.
constexpr std::uint64_t kInitStream = 0x1417;

Tensor xavier(Rng& rng, std::size_t rows, std::size_t cols, std::size_t fan_in,
              std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(rows, cols);
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

void expect_shape(const Tensor& t, std::size_t rows, std::size_t cols, const std::string& name) {
  if (t.rows() != rows || t.cols() != cols) {
    throw ConfigError("parameter " + name + " has shape " + t.shape_string() + ", expected [" +
                      std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
}

}  // namespace

std::string_view to_string(Aggregator kind) {
  switch (kind) {
    case Aggregator::abmil: return "abmil";
    case Aggregator::madmil: return "madmil";
    case Aggregator::mean_pool: return "mean_pool";
    case Aggregator::max_pool: return "max_pool";
  }
  return "unknown";
}

Aggregator parse_aggregator(std::string_view name) {
  if (name == "abmil") return Aggregator::abmil;
  if (name == "madmil") return Aggregator::madmil;
  if (name == "mean_pool") return Aggregator::mean_pool;
  if (name == "max_pool") return Aggregator::max_pool;
  throw ConfigError("unknown aggregator '" + std::string(name) +
                    "' (expected abmil, madmil, mean_pool or max_pool)");
}

void ModelConfig::validate() const {
  if (input_dim < 1) throw ConfigError("model.input_dim must be >= 1");
  if (embed_dim < 1) throw ConfigError("model.embed_dim must be >= 1");
  if (heads < 1) throw ConfigError("model.heads must be >= 1");
  if (classes < 2) throw ConfigError("model.classes must be >= 2");
  if (aggregator == Aggregator::abmil && heads != 1) {
    throw ConfigError("abmil is single-head; use madmil for heads > 1");
  }
  if (aggregator == Aggregator::madmil && heads > embed_dim) {
    throw ConfigError("model.heads (" + std::to_string(heads) + ") exceeds embed_dim (" +
                      std::to_string(embed_dim) + ")");
  }
  if (attention_hidden && *attention_hidden < 1) {
    throw ConfigError("model.attention_hidden must be >= 1");
  }
}

std::size_t ModelConfig::head_count() const {
  switch (aggregator) {
    case Aggregator::abmil: return 1;
    case Aggregator::madmil: return heads;
    default: return 0;
  }
}

std::size_t ModelConfig::head_width() const {
  return uses_attention() ? ceil_div(embed_dim, head_count()) : 0;
}

std::size_t ModelConfig::head_hidden() const {
  if (!uses_attention()) return 0;
  if (attention_hidden) return *attention_hidden;
  if (aggregator == Aggregator::abmil) return kAbmilHidden;
  return ceil_div(head_width(), 2);
}

std::string ModelConfig::label() const {
  switch (aggregator) {
    case Aggregator::abmil: return "ABMIL";
    case Aggregator::madmil: return "MAD-MIL/" + std::to_string(heads);
    case Aggregator::mean_pool: return "Mean-Pool";
    case Aggregator::max_pool: return "Max-Pool";
  }
  return "?";
}

std::vector<Tensor*> ModelParams::tensors() {
  std::vector<Tensor*> out{&compress_weight, &compress_bias};
  for (auto& h : heads) {
    for (Tensor* t : {&h.V, &h.U, &h.w, &h.b_V, &h.b_U, &h.b_w}) out.push_back(t);
  }
  out.push_back(&classifier_weight);
  out.push_back(&classifier_bias);
  return out;
}

std::vector<const Tensor*> ModelParams::tensors() const {
  std::vector<const Tensor*> out;
  for (Tensor* t : const_cast<ModelParams*>(this)->tensors()) out.push_back(t);
  return out;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed, kInitStream);
  const std::size_t D = config.embed_dim;
  ModelParams p;
  p.compress_weight = xavier(rng, D, config.input_dim, config.input_dim, D);
  p.compress_bias = Tensor(1, D);
  const std::size_t d = config.head_width();
  const std::size_t a = config.head_hidden();
  for (std::size_t m = 0; m < config.head_count(); ++m) {
    GatedAttentionHead h;
    h.V = xavier(rng, a, d, d, a);
    h.U = xavier(rng, a, d, d, a);
    h.w = xavier(rng, a, 1, a, 1);
    h.b_V = Tensor(1, a);
    h.b_U = Tensor(1, a);
    h.b_w = Tensor(1, 1);
    p.heads.push_back(std::move(h));
  }
  p.classifier_weight = xavier(rng, config.classes, config.output_width(), config.output_width(),
                               config.classes);
  p.classifier_bias = Tensor(1, config.classes);
  return p;
}

ModelParams zero_params(const ModelConfig& config) {
  ModelParams p = init_params(config, 0);
  for (Tensor* t : p.tensors())
    for (double& v : t->values()) v = 0.0;
  return p;
}

void check_params(const ModelConfig& config, const ModelParams& params) {
  config.validate();
  const std::size_t D = config.embed_dim;
  expect_shape(params.compress_weight, D, config.input_dim, "compress_weight");
  expect_shape(params.compress_bias, 1, D, "compress_bias");
  if (params.heads.size() != config.head_count()) {
    throw ConfigError("model has " + std::to_string(params.heads.size()) +
                      " attention heads, config expects " + std::to_string(config.head_count()));
  }
  const std::size_t d = config.head_width();
  const std::size_t a = config.head_hidden();
  for (std::size_t m = 0; m < params.heads.size(); ++m) {
    const auto& h = params.heads[m];
    const std::string tag = "head" + std::to_string(m) + ".";
    expect_shape(h.V, a, d, tag + "V");
    expect_shape(h.U, a, d, tag + "U");
    expect_shape(h.w, a, 1, tag + "w");
    expect_shape(h.b_V, 1, a, tag + "b_V");
    expect_shape(h.b_U, 1, a, tag + "b_U");
    expect_shape(h.b_w, 1, 1, tag + "b_w");
  }
  expect_shape(params.classifier_weight, config.classes, config.output_width(),
               "classifier_weight");
  expect_shape(params.classifier_bias, 1, config.classes, "classifier_bias");
}

std::vector<ad::Var> BoundModel::leaves() const {
  std::vector<ad::Var> out{compress_weight, compress_bias};
  for (const auto& h : heads) {
    for (ad::Var v : {h.V, h.U, h.w, h.b_V, h.b_U, h.b_w}) out.push_back(v);
  }
  out.push_back(classifier_weight);
  out.push_back(classifier_bias);
  return out;
}

BoundHead bind_head(ad::Tape& tape, const GatedAttentionHead& head, bool requires_grad) {
  BoundHead b{tape.leaf(head.V, requires_grad),   tape.leaf(head.U, requires_grad),
              tape.leaf(head.w, requires_grad),   tape.leaf(head.b_V, requires_grad),
              tape.leaf(head.b_U, requires_grad), tape.leaf(head.b_w, requires_grad),
              {},                                 {}};
  b.V_t = ad::transpose(b.V);
  b.U_t = ad::transpose(b.U);
  return b;
}

BoundModel bind(ad::Tape& tape, const ModelParams& params, bool requires_grad) {
  BoundModel b;
  b.compress_weight = tape.leaf(params.compress_weight, requires_grad);
  b.compress_bias = tape.leaf(params.compress_bias, requires_grad);
  b.compress_weight_t = ad::transpose(b.compress_weight);
  for (const auto& h : params.heads) b.heads.push_back(bind_head(tape, h, requires_grad));
  b.classifier_weight = tape.leaf(params.classifier_weight, requires_grad);
  b.classifier_bias = tape.leaf(params.classifier_bias, requires_grad);
  return b;
}

ad::Var compress(const BoundModel& model, ad::Var X) {
  if (X.cols() != model.compress_weight.cols()) {
    throw DimensionError("compress: bag has " + std::to_string(X.cols()) +
                         " features per instance, model expects " +
                         std::to_string(model.compress_weight.cols()));
  }
  return ad::relu(ad::add_row(ad::matmul(X, model.compress_weight_t), model.compress_bias));
}

ad::Var gated_attention(const BoundHead& head, ad::Var H) {
  if (H.rows() == 0) throw EmptyBagError("gated_attention: bag has no instances");
  if (H.cols() != head.V.cols()) {
    throw DimensionError("gated_attention: embedding width " + std::to_string(H.cols()) +
                         " does not match head width " + std::to_string(head.V.cols()));
  }
  ad::Var content = ad::tanh(ad::add_row(ad::matmul(H, head.V_t), head.b_V));
  ad::Var gate = ad::sigmoid(ad::add_row(ad::matmul(H, head.U_t), head.b_U));
  ad::Var scores = ad::add_scalar(ad::matmul(ad::mul(content, gate), head.w), head.b_w);
  return ad::softmax_over_instances(scores);
}

std::vector<ad::Var> split_heads(ad::Var H, std::size_t heads) {
  if (heads < 1) throw ConfigError("split_heads: number of heads must be >= 1");
  const std::size_t width = (H.cols() + heads - 1) / heads;
  ad::Var padded = width * heads == H.cols() ? H : ad::pad_columns(H, width * heads);
  if (heads == 1) return {padded};
  std::vector<ad::Var> parts;
  for (std::size_t m = 0; m < heads; ++m)
    parts.push_back(ad::slice_columns(padded, m * width, (m + 1) * width));
  return parts;
}

Aggregation aggregate(const ModelConfig& config, const BoundModel& model, ad::Var H) {
  if (H.rows() == 0) throw EmptyBagError("aggregate: bag has no instances");
  switch (config.aggregator) {
    case Aggregator::mean_pool: return {ad::mean_rows(H), {}};
    case Aggregator::max_pool: return {ad::max_rows(H), {}};
    case Aggregator::abmil:
    case Aggregator::madmil: break;
  }
  const std::size_t M = config.head_count();
  if (model.heads.size() != M) {
    throw DimensionError("aggregate: model has " + std::to_string(model.heads.size()) +
                         " heads, config expects " + std::to_string(M));
  }
  const auto parts = split_heads(H, M);
  Aggregation out;
  std::vector<ad::Var> pooled;
  for (std::size_t m = 0; m < M; ++m) {
    ad::Var a = gated_attention(model.heads[m], parts[m]);
    // Σ_n a_n f_n as aᵀ·H_m
    pooled.push_back(ad::matmul(ad::transpose(a), parts[m]));
    out.attention.push_back(a);
  }
  ad::Var Z = M == 1 ? pooled.front() : ad::concat_columns(pooled);
  if (Z.cols() != config.output_width()) Z = ad::slice_columns(Z, 0, config.output_width());
  out.Z = Z;
  return out;
}

ForwardPass forward(const ModelConfig& config, const BoundModel& model, ad::Var X) {
  if (X.rows() == 0) throw EmptyBagError("forward: bag has no instances");
  ad::Var H = compress(model, X);
  Aggregation agg = aggregate(config, model, H);
  ad::Var logits =
      ad::add_row(ad::matmul_nt(agg.Z, model.classifier_weight), model.classifier_bias);
  return {logits, std::move(agg.attention)};
}

Tensor predict_logits(const ModelConfig& config, const ModelParams& params, const Tensor& X) {
  ad::Tape tape;
  const BoundModel model = bind(tape, params, false);
  return forward(config, model, tape.constant(X)).logits.value();
}

std::vector<Tensor> attention_weights(const ModelConfig& config, const ModelParams& params,
                                      const Tensor& X) {
  ad::Tape tape;
  const BoundModel model = bind(tape, params, false);
  const ForwardPass pass = forward(config, model, tape.constant(X));
  std::vector<Tensor> out;
  for (ad::Var a : pass.attention) out.push_back(a.value());
  return out;
}

double bag_loss(const ModelConfig& config, const ModelParams& params, const Tensor& X,
                std::size_t label) {
  ad::Tape tape;
  const BoundModel model = bind(tape, params, false);
  const ForwardPass pass = forward(config, model, tape.constant(X));
  return ad::cross_entropy(pass.logits, label).value()[0];
}

}  // namespace madmil
