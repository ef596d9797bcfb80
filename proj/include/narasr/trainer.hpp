#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "narasr/errors.hpp"
#include "narasr/joint_loss.hpp"
#include "narasr/model.hpp"
#include "narasr/synthetic.hpp"

namespace narasr {

struct TrainConfig {
  ModelConfig model;
  LossWeights loss;
  double learning_rate = 1e-3;
  std::size_t steps = 8000;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  // Parameter groups held fixed for the first N steps.
  std::size_t freeze_encoder_steps = 0;
  std::size_t freeze_lm_steps = 0;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 5.0;
  // Masked-LM steps run on the text corpus before joint training.
  std::size_t pretrain_lm_steps = 1000;
  // Per-step augmentation of the acoustic input. Each frame is dropped or
  // repeated with this probability (never two drops in a row, so no token
  // segment of 2+ frames vanishes), then Gaussian noise is added.
  double frame_perturb_prob = 0.0;
  double feature_noise_std = 0.0;
  // Exponential moving average of the weights; when > 0 the averaged weights
  // are what train() returns and what the step callback sees. The effective
  // decay ramps up as min(ema_decay, (1 + t) / (10 + t)).
  double ema_decay = 0.999;

  void validate() const;
};

struct StepLog {
  std::size_t step = 0;
  LossComponents loss;  // batch means
};

struct TrainResult {
  ModelParams params;
  std::vector<StepLog> history;
  std::vector<double> pretrain_losses;
};

class DivergenceError : public TrainingDivergence {
 public:
  DivergenceError(const std::string& what, ModelParams last_good, std::size_t step)
      : TrainingDivergence(what), last_good_(std::move(last_good)), step_(step) {}
  const ModelParams& last_good() const { return last_good_; }
  std::size_t step() const { return step_; }

 private:
  ModelParams last_good_;
  std::size_t step_;
};

// Adaptive moment estimation with bias correction.
class Adam {
 public:
  explicit Adam(const ModelParams& params, double learning_rate, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);
  // Tensors with update[i] == false keep their values and moments.
  void step(ModelParams& params, const std::vector<Tensor>& grads, const std::vector<bool>& update);
  std::size_t steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct SampleGradient {
  std::vector<Tensor> grads;  // aligned with ModelParams::tensors()
  LossComponents loss;
};

// Randomly stretched and noised copy of an utterance; see TrainConfig.
Utterance augment(const Utterance& utt, double frame_perturb_prob, double noise_std, std::mt19937_64& rng);

// Joint-loss gradient of one utterance with ground-truth target length.
SampleGradient joint_gradient(const ModelParams& params, const Utterance& utt, const LossWeights& weights,
                              const std::vector<ParamGroup>& trainable);

// Receives the model train() would return if it stopped after this step.
using StepCallback = std::function<void(const StepLog&, const ModelParams&)>;

// Mini-batch joint training. Starts from `init` when given, otherwise from a
// seeded initialization. Throws DivergenceError on a non-finite loss.
TrainResult train(const std::vector<Utterance>& data, const Vocabulary& vocab, const TrainConfig& config,
                  const std::vector<std::vector<TokenId>>& text_corpus = {},
                  std::optional<ModelParams> init = std::nullopt, const StepCallback& on_step = {});

struct MlmConfig {
  double mask_prob = 0.15;
  std::size_t steps = 500;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
};

// Trains lm.embed, the LM blocks and out head to recover masked tokens. Returns
// the mean masked CE of each step.
std::vector<double> mlm_pretrain(ModelParams& params, const std::vector<std::vector<TokenId>>& corpus,
                                 TokenId unk, const MlmConfig& config);

// Masked-token CE of one sequence: masked positions are replaced by unk and
// predicted from the LM logits. An empty mask gives loss 0 and zero gradients.
struct MlmSample {
  double loss = 0.0;
  std::vector<Tensor> grads;
};
MlmSample mlm_gradient(const ModelParams& params, const std::vector<TokenId>& tokens,
                       const std::vector<bool>& masked, TokenId unk);

}  // namespace narasr
