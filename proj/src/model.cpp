#include "narasr/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "narasr/errors.hpp"

namespace narasr {

void ModelConfig::validate() const {
  if (input_dim == 0 || model_dim == 0 || ffn_dim == 0) throw ConfigError("model dimensions must be positive");
  if (heads == 0 || model_dim % heads != 0) {
    throw ConfigError("model_dim " + std::to_string(model_dim) + " is not divisible by heads " +
                      std::to_string(heads));
  }
  if (vocab_size < 4) throw ConfigError("vocab_size must be at least 4");
  if (!std::isfinite(alpha)) throw ConfigError("alpha must be finite");
}

namespace {

std::string layer_name(const char* block, std::size_t i, const char* part) {
  return std::string(block) + "." + std::to_string(i) + "." + part;
}

constexpr const char* kAttnParts[] = {"wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"};

}  // namespace

void ModelParams::add(std::string name, std::size_t rows, std::size_t cols, ParamGroup group) {
  index_.emplace(name, tensors_.size());
  tensors_.push_back(NamedTensor{std::move(name), Tensor(rows, cols), group});
}

ModelParams::ModelParams(ModelConfig config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.model_dim, V = config_.vocab_size, f = config_.ffn_dim;
  auto add_attention = [&](const std::string& prefix, ParamGroup g) {
    for (const char* part : kAttnParts) {
      const bool bias = part[0] == 'b';
      add(prefix + "." + part, bias ? 1 : d, d, g);
    }
  };
  auto add_block = [&](const char* block, std::size_t i, ParamGroup g) {
    add(layer_name(block, i, "ln1.g"), 1, d, g);
    add(layer_name(block, i, "ln1.b"), 1, d, g);
    add_attention(layer_name(block, i, "attn"), g);
    add(layer_name(block, i, "ln2.g"), 1, d, g);
    add(layer_name(block, i, "ln2.b"), 1, d, g);
    add(layer_name(block, i, "ffn.w1"), d, f, g);
    add(layer_name(block, i, "ffn.b1"), 1, f, g);
    add(layer_name(block, i, "ffn.w2"), f, d, g);
    add(layer_name(block, i, "ffn.b2"), 1, d, g);
  };

  add("enc.in.w", config_.input_dim, d, ParamGroup::kEncoder);
  add("enc.in.b", 1, d, ParamGroup::kEncoder);
  for (std::size_t i = 0; i < config_.encoder_layers; ++i) add_block("enc", i, ParamGroup::kEncoder);
  add("enc.ln.g", 1, d, ParamGroup::kEncoder);
  add("enc.ln.b", 1, d, ParamGroup::kEncoder);
  add("ctc.w", d, V, ParamGroup::kEncoder);
  add("ctc.b", 1, V, ParamGroup::kEncoder);

  add_attention("mcm.attn", ParamGroup::kConversion);
  add("mcm.w", d, V, ParamGroup::kConversion);

  add("lm.embed", V, d, ParamGroup::kLanguageModel);
  for (std::size_t i = 0; i < config_.lm_layers; ++i) add_block("lm", i, ParamGroup::kLanguageModel);
  add("lm.ln.g", 1, d, ParamGroup::kLanguageModel);
  add("lm.ln.b", 1, d, ParamGroup::kLanguageModel);
  add("out.w", d, V, ParamGroup::kLanguageModel);
  add("out.b", 1, V, ParamGroup::kLanguageModel);
}

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p(config);
  std::mt19937_64 rng(seed);
  for (auto& nt : p.tensors_) {
    const std::string& n = nt.name;
    const bool is_gain = n.ends_with(".g");
    const bool is_bias = nt.value.rows() == 1 && !is_gain;
    if (is_gain) {
      nt.value.fill(1.0);
    } else if (is_bias) {
      nt.value.fill(0.0);
    } else if (n == "lm.embed") {
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      for (double& v : nt.value.values()) v = u(rng);
    } else {
      const double limit = std::sqrt(6.0 / static_cast<double>(nt.value.rows() + nt.value.cols()));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (double& v : nt.value.values()) v = u(rng);
    }
  }
  return p;
}

std::size_t ModelParams::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

bool ModelParams::operator==(const ModelParams& o) const {
  if (!(config_ == o.config_) || tensors_.size() != o.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name != o.tensors_[i].name || !(tensors_[i].value == o.tensors_[i].value)) return false;
  }
  return true;
}

Tensor positional_embedding(std::size_t length, std::size_t dim) {
  if (length < 1) throw ArgumentError("positional_embedding: length must be at least 1");
  if (dim < 1) throw ArgumentError("positional_embedding: dimension must be at least 1");
  Tensor pe(length, dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t c = 0; c < dim; ++c) {
      const std::size_t i = c / 2;
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * freq;
      pe(pos, c) = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

namespace graph {

BoundParams::BoundParams(ad::Tape& tape, const ModelParams& params, bool trainable)
    : tape_(&tape), params_(&params) {
  vars_.reserve(params.tensors().size());
  for (const auto& nt : params.tensors())
    vars_.push_back(trainable ? tape.variable(nt.value) : tape.constant(nt.value));
}

BoundParams::BoundParams(ad::Tape& tape, const ModelParams& params,
                         std::vector<ParamGroup> trainable_groups)
    : tape_(&tape), params_(&params) {
  vars_.reserve(params.tensors().size());
  for (const auto& nt : params.tensors()) {
    bool train = false;
    for (ParamGroup g : trainable_groups) train = train || g == nt.group;
    vars_.push_back(train ? tape.variable(nt.value) : tape.constant(nt.value));
  }
}

namespace {

ad::AttentionWeights attention_weights(const BoundParams& p, const std::string& prefix) {
  return {p[prefix + ".wq"], p[prefix + ".bq"], p[prefix + ".wk"], p[prefix + ".bk"],
          p[prefix + ".wv"], p[prefix + ".bv"], p[prefix + ".wo"], p[prefix + ".bo"]};
}

// Pre-norm self-attention + feedforward block.
ad::Var transformer_block(const BoundParams& p, const char* block, std::size_t i, ad::Var x) {
  const std::size_t heads = p.params().config().heads;
  ad::Var a = ad::layer_norm(x, p[layer_name(block, i, "ln1.g")], p[layer_name(block, i, "ln1.b")]);
  x = ad::add(x, ad::multi_head_attention(a, a, a, heads, attention_weights(p, layer_name(block, i, "attn"))));
  ad::Var f = ad::layer_norm(x, p[layer_name(block, i, "ln2.g")], p[layer_name(block, i, "ln2.b")]);
  ad::Var hidden = ad::relu(ad::add_row(ad::matmul(f, p[layer_name(block, i, "ffn.w1")]),
                                        p[layer_name(block, i, "ffn.b1")]));
  ad::Var ff = ad::add_row(ad::matmul(hidden, p[layer_name(block, i, "ffn.w2")]),
                           p[layer_name(block, i, "ffn.b2")]);
  return ad::add(x, ff);
}

}  // namespace

ad::Var encode(const BoundParams& p, const Tensor& features) {
  const ModelConfig& cfg = p.params().config();
  if (features.rows() == 0) throw ArgumentError("encode: utterance has no frames");
  if (features.cols() != cfg.input_dim) {
    throw DimensionError("encode: feature dimension " + std::to_string(features.cols()) +
                         " != configured " + std::to_string(cfg.input_dim));
  }
  ad::Tape& tape = p.tape();
  ad::Var x = ad::add_row(ad::matmul(tape.constant(features), p["enc.in.w"]), p["enc.in.b"]);
  x = ad::add(x, tape.constant(positional_embedding(features.rows(), cfg.model_dim)));
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) x = transformer_block(p, "enc", i, x);
  return ad::layer_norm(x, p["enc.ln.g"], p["enc.ln.b"]);
}

ad::Var ctc_branch(const BoundParams& p, ad::Var H_AC) {
  return ad::add_row(ad::matmul(H_AC, p["ctc.w"]), p["ctc.b"]);
}

ad::Var convert_length(const BoundParams& p, ad::Var H_AC, ad::Var H_PE) {
  return ad::multi_head_attention(H_PE, H_AC, H_AC, p.params().config().heads,
                                  attention_weights(p, "mcm.attn"));
}

ad::Var preliminary_logits(const BoundParams& p, ad::Var H) { return ad::matmul(H, p["mcm.w"]); }

ad::Var lm_encode(const BoundParams& p, ad::Var H_LM) {
  const ModelConfig& cfg = p.params().config();
  ad::Var x = ad::add(H_LM, p.tape().constant(positional_embedding(H_LM.rows(), cfg.model_dim)));
  for (std::size_t i = 0; i < cfg.lm_layers; ++i) x = transformer_block(p, "lm", i, x);
  x = ad::layer_norm(x, p["lm.ln.g"], p["lm.ln.b"]);
  return ad::add_row(ad::matmul(x, p["out.w"]), p["out.b"]);
}

ad::Var fuse_logits(ad::Var L_l, ad::Var L_a, double alpha) {
  if (!L_l.value().same_shape(L_a.value())) throw DimensionError("fuse_logits: shape mismatch");
  return ad::add(ad::scale(L_l, alpha), L_a);
}

TracedForward forward_from_encoding(const BoundParams& p, ad::Var H_AC, ad::Var frame_logits,
                                    std::size_t length) {
  if (length < 1) throw ArgumentError("forward_nar: target length must be at least 1");
  TracedForward f;
  f.H_AC = H_AC;
  f.frame_logits = frame_logits;
  f.H_PE = p.tape().constant(positional_embedding(length, p.params().config().model_dim));
  f.H = convert_length(p, H_AC, f.H_PE);
  f.L_a = preliminary_logits(p, f.H);
  f.W_a = ad::softmax_rows(f.L_a);
  f.H_LM = ad::matmul(f.W_a, p["lm.embed"]);
  f.L_l = lm_encode(p, f.H_LM);
  f.L_f = fuse_logits(f.L_l, f.L_a, p.params().config().alpha);
  return f;
}

TracedForward forward_nar(const BoundParams& p, const Tensor& features, std::size_t length) {
  if (length < 1) throw ArgumentError("forward_nar: target length must be at least 1");
  ad::Var h = encode(p, features);
  return forward_from_encoding(p, h, ctc_branch(p, h), length);
}

ForwardTrace to_trace(const TracedForward& f) {
  return ForwardTrace{f.H_AC.value(), f.frame_logits.value(), f.H_PE.value(), f.H.value(),
                      f.L_a.value(), f.W_a.value(), f.H_LM.value(), f.L_l.value(), f.L_f.value()};
}

}  // namespace graph

Tensor encode(const Tensor& features, const ModelParams& params) {
  ad::Tape tape(false);
  graph::BoundParams p(tape, params, false);
  return graph::encode(p, features).value();
}

Tensor ctc_branch(const Tensor& H_AC, const ModelParams& params) {
  ad::Tape tape(false);
  graph::BoundParams p(tape, params, false);
  return graph::ctc_branch(p, tape.constant(H_AC)).value();
}

Tensor convert_length(const Tensor& H_AC, std::size_t length, const ModelParams& params) {
  if (length < 1) throw ArgumentError("convert_length: target length must be at least 1");
  if (H_AC.rows() < 1) throw ArgumentError("convert_length: no acoustic frames");
  ad::Tape tape(false);
  graph::BoundParams p(tape, params, false);
  ad::Var pe = tape.constant(positional_embedding(length, params.config().model_dim));
  return graph::convert_length(p, tape.constant(H_AC), pe).value();
}

Tensor preliminary_logits(const Tensor& H, const ModelParams& params) {
  return matmul(H, params.at("mcm.w"));
}

Conversion modality_convert(const Tensor& L_a, const Tensor& M_BERT) {
  if (L_a.cols() != M_BERT.rows()) {
    throw DimensionError("modality_convert: " + std::to_string(L_a.cols()) + " logit columns vs " +
                         std::to_string(M_BERT.rows()) + " embedding rows");
  }
  Conversion c;
  c.W_a = softmax_rows(L_a);
  c.H_LM = matmul(c.W_a, M_BERT);
  return c;
}

Tensor lm_encode(const Tensor& H_LM, const ModelParams& params) {
  ad::Tape tape(false);
  graph::BoundParams p(tape, params, false);
  return graph::lm_encode(p, tape.constant(H_LM)).value();
}

Tensor fuse_logits(const Tensor& L_l, const Tensor& L_a, double alpha) {
  if (!L_l.same_shape(L_a)) throw DimensionError("fuse_logits: shape mismatch");
  Tensor out = L_a;
  auto o = out.values();
  auto l = L_l.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += alpha * l[i];
  return out;
}

ForwardTrace forward_nar(const Tensor& features, std::size_t length, const ModelParams& params) {
  ad::Tape tape(false);
  graph::BoundParams p(tape, params, false);
  return graph::to_trace(graph::forward_nar(p, features, length));
}

}  // namespace narasr
