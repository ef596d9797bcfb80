#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "narasr/autodiff.hpp"
#include "narasr/tensor.hpp"

namespace narasr {

struct ModelConfig {
  std::size_t input_dim = 16;  // d_in, feature dimension
  std::size_t model_dim = 64;  // d
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t encoder_layers = 2;
  std::size_t lm_layers = 2;
  std::size_t vocab_size = 23;  // V
  double alpha = 0.3;           // logits fusion weight

  // Throws ConfigError on inconsistent dimensions.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Parameter groups used by freeze flags and by LM pretraining.
enum class ParamGroup { kEncoder, kConversion, kLanguageModel };

struct NamedTensor {
  std::string name;
  Tensor value;
  ParamGroup group;
};

// Every trainable tensor, in a fixed order. Names follow "<block>.<layer>.<part>";
// "mcm.w" is the conversion projection W and "lm.embed" is the LM token
// embedding table M_BERT.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(ModelConfig config);

  // Xavier-style uniform init from a seeded generator; layer-norm gains 1.
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<NamedTensor>& tensors() { return tensors_; }
  const std::vector<NamedTensor>& tensors() const { return tensors_; }

  std::size_t index(const std::string& name) const;
  Tensor& at(const std::string& name) { return tensors_[index(name)].value; }
  const Tensor& at(const std::string& name) const { return tensors_[index(name)].value; }
  std::size_t parameter_count() const;

  bool operator==(const ModelParams& o) const;

 private:
  void add(std::string name, std::size_t rows, std::size_t cols, ParamGroup group);

  ModelConfig config_;
  std::vector<NamedTensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Intermediate tensors of one utterance.
struct ForwardTrace {
  Tensor H_AC;          // T x d acoustic representation
  Tensor frame_logits;  // T x V CTC branch output
  Tensor H_PE;          // L x d positional queries
  Tensor H;             // L x d converted acoustic embedding
  Tensor L_a;           // L x V preliminary logits
  Tensor W_a;           // L x V conversion weights
  Tensor H_LM;          // L x d linguistic representation
  Tensor L_l;           // L x V LM logits
  Tensor L_f;           // L x V fused logits

  std::size_t frames() const { return H_AC.rows(); }
  std::size_t target_length() const { return L_f.rows(); }
};

// Fixed sinusoidal table: even columns sin(pos / 10000^(2i/d)), odd columns cos.
Tensor positional_embedding(std::size_t length, std::size_t dim);

Tensor encode(const Tensor& features, const ModelParams& params);
Tensor ctc_branch(const Tensor& H_AC, const ModelParams& params);
Tensor convert_length(const Tensor& H_AC, std::size_t length, const ModelParams& params);
Tensor preliminary_logits(const Tensor& H, const ModelParams& params);
struct Conversion {
  Tensor W_a;
  Tensor H_LM;
};
Conversion modality_convert(const Tensor& L_a, const Tensor& M_BERT);
Tensor lm_encode(const Tensor& H_LM, const ModelParams& params);
Tensor fuse_logits(const Tensor& L_l, const Tensor& L_a, double alpha);
ForwardTrace forward_nar(const Tensor& features, std::size_t length, const ModelParams& params);

namespace graph {

// Parameters bound as tape leaves, indexed like ModelParams::tensors().
class BoundParams {
 public:
  // trainable=false binds constants (no gradients).
  BoundParams(ad::Tape& tape, const ModelParams& params, bool trainable);
  // Only parameters whose group is in `trainable_groups` receive gradients.
  BoundParams(ad::Tape& tape, const ModelParams& params, std::vector<ParamGroup> trainable_groups);

  ad::Var operator[](const std::string& name) const { return vars_[params_->index(name)]; }
  const std::vector<ad::Var>& vars() const { return vars_; }
  const ModelParams& params() const { return *params_; }
  ad::Tape& tape() const { return *tape_; }

 private:
  ad::Tape* tape_;
  const ModelParams* params_;
  std::vector<ad::Var> vars_;
};

struct TracedForward {
  ad::Var H_AC, frame_logits, H_PE, H, L_a, W_a, H_LM, L_l, L_f;
};

ad::Var encode(const BoundParams& p, const Tensor& features);
ad::Var ctc_branch(const BoundParams& p, ad::Var H_AC);
ad::Var convert_length(const BoundParams& p, ad::Var H_AC, ad::Var H_PE);
ad::Var preliminary_logits(const BoundParams& p, ad::Var H);
ad::Var lm_encode(const BoundParams& p, ad::Var H_LM);
ad::Var fuse_logits(ad::Var L_l, ad::Var L_a, double alpha);
TracedForward forward_nar(const BoundParams& p, const Tensor& features, std::size_t length);

// Runs only the MCM/LM half on an already encoded utterance.
TracedForward forward_from_encoding(const BoundParams& p, ad::Var H_AC, ad::Var frame_logits,
                                    std::size_t length);

ForwardTrace to_trace(const TracedForward& f);

}  // namespace graph

}  // namespace narasr
