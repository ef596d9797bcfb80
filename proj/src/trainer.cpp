#include "narasr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "narasr/errors.hpp"

namespace narasr {

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative");
  if (!(frame_perturb_prob >= 0.0 && frame_perturb_prob < 0.5)) {
    throw ConfigError("frame_perturb_prob must lie in [0, 0.5)");
  }
  if (!(feature_noise_std >= 0.0)) throw ConfigError("feature_noise_std must be non-negative");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must lie in [0, 1)");
}

Utterance augment(const Utterance& utt, double frame_perturb_prob, double noise_std, std::mt19937_64& rng) {
  const Tensor& x = utt.features;
  std::vector<std::size_t> rows;
  rows.reserve(x.rows() * 2);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  bool dropped_last = false;
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const double r = frame_perturb_prob > 0.0 ? u01(rng) : 1.0;
    if (r < frame_perturb_prob && !dropped_last) {
      dropped_last = true;
      continue;
    }
    dropped_last = false;
    rows.push_back(t);
    if (r >= frame_perturb_prob && r < 2.0 * frame_perturb_prob) rows.push_back(t);
  }
  // CTC needs a frame per token plus one per repeated pair
  std::size_t needed = utt.tokens.size();
  for (std::size_t i = 1; i < utt.tokens.size(); ++i) needed += utt.tokens[i] == utt.tokens[i - 1];
  if (rows.size() < needed) {
    rows.resize(x.rows());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
  }
  Utterance out{utt.id, Tensor(rows.size(), x.cols()), utt.tokens};
  std::normal_distribution<double> noise(0.0, noise_std > 0.0 ? noise_std : 1.0);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < x.cols(); ++c) {
      out.features(i, c) = x(rows[i], c) + (noise_std > 0.0 ? noise(rng) : 0.0);
    }
  return out;
}

Adam::Adam(const ModelParams& params, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& nt : params.tensors()) {
    m_.emplace_back(nt.value.rows(), nt.value.cols());
    v_.emplace_back(nt.value.rows(), nt.value.cols());
  }
}

void Adam::step(ModelParams& params, const std::vector<Tensor>& grads, const std::vector<bool>& update) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto& tensors = params.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (!update[i]) continue;
    auto w = tensors[i].value.values();
    auto g = grads[i].values();
    auto m = m_[i].values();
    auto v = v_[i].values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

SampleGradient joint_gradient(const ModelParams& params, const Utterance& utt, const LossWeights& weights,
                              const std::vector<ParamGroup>& trainable) {
  if (utt.tokens.empty()) throw ContractViolation("training utterance " + utt.id + " has an empty transcript");
  ad::Tape tape(true);
  graph::BoundParams bound(tape, params, trainable);
  auto fwd = graph::forward_nar(bound, utt.features, utt.tokens.size());
  auto loss = joint_loss(fwd, utt.tokens, weights);
  tape.backward(loss.total);
  SampleGradient out;
  out.loss = loss.components;
  out.grads.reserve(bound.vars().size());
  for (const auto& v : bound.vars()) out.grads.push_back(tape.grad(v));
  return out;
}

namespace {

std::vector<Tensor> zero_grads(const ModelParams& params) {
  std::vector<Tensor> g;
  for (const auto& nt : params.tensors()) g.emplace_back(nt.value.rows(), nt.value.cols());
  return g;
}

void add_scaled(std::vector<Tensor>& acc, const std::vector<Tensor>& g, double s) {
  for (std::size_t i = 0; i < acc.size(); ++i) {
    auto a = acc[i].values();
    auto b = g[i].values();
    for (std::size_t k = 0; k < a.size(); ++k) a[k] += s * b[k];
  }
}

void clip(std::vector<Tensor>& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double s = max_norm / norm;
  for (auto& g : grads)
    for (double& v : g.values()) v *= s;
}

// Cycles through a dataset in shuffled order, reshuffling each epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }
  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    while (out.size() < batch) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::mt19937_64 rng_;
};

}  // namespace

TrainResult train(const std::vector<Utterance>& data, const Vocabulary& vocab, const TrainConfig& config,
                  const std::vector<std::vector<TokenId>>& text_corpus, std::optional<ModelParams> init,
                  const StepCallback& on_step) {
  config.validate();
  if (data.empty()) throw ArgumentError("train: empty dataset");
  if (config.model.vocab_size != vocab.size()) {
    throw ConfigError("train: model vocab_size " + std::to_string(config.model.vocab_size) +
                      " differs from vocabulary size " + std::to_string(vocab.size()));
  }
  TrainResult result;
  if (init && !(init->config() == config.model)) {
    throw ConfigError("train: initial parameters were built for a different model config");
  }
  result.params = init ? std::move(*init) : ModelParams::initialize(config.model, config.seed);

  if (config.pretrain_lm_steps > 0) {
    if (text_corpus.empty()) throw ArgumentError("train: LM pretraining requested without a text corpus");
    MlmConfig mlm;
    mlm.steps = config.pretrain_lm_steps;
    mlm.learning_rate = config.learning_rate;
    mlm.seed = config.seed + 1;
    ModelParams before = result.params;
    try {
      result.pretrain_losses = mlm_pretrain(result.params, text_corpus, vocab.unk_id(), mlm);
    } catch (const TrainingDivergence& e) {
      // step 0: nothing from the main loop to fall back on
      throw DivergenceError(std::string("LM pretraining diverged: ") + e.what(), std::move(before), 0);
    }
  }

  Adam adam(result.params, config.learning_rate);
  BatchSampler sampler(data.size(), config.seed);
  std::mt19937_64 augment_rng(config.seed + 2);
  const bool augmenting = config.frame_perturb_prob > 0.0 || config.feature_noise_std > 0.0;
  ModelParams last_good = result.params;
  const auto& tensors = result.params.tensors();
  std::optional<ModelParams> ema;
  if (config.ema_decay > 0.0) ema = result.params;

  for (std::size_t step = 1; step <= config.steps; ++step) {
    const bool freeze_enc = step <= config.freeze_encoder_steps;
    const bool freeze_lm = step <= config.freeze_lm_steps;
    std::vector<ParamGroup> trainable{ParamGroup::kConversion};
    if (!freeze_enc) trainable.push_back(ParamGroup::kEncoder);
    if (!freeze_lm) trainable.push_back(ParamGroup::kLanguageModel);
    std::vector<bool> update(tensors.size());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      update[i] = std::find(trainable.begin(), trainable.end(), tensors[i].group) != trainable.end();
    }

    const auto batch = sampler.next(config.batch_size);
    const double inv = 1.0 / static_cast<double>(batch.size());
    auto grads = zero_grads(result.params);
    StepLog log;
    log.step = step;
    try {
      for (std::size_t idx : batch) {
        auto sample = augmenting ? joint_gradient(result.params,
                                                  augment(data[idx], config.frame_perturb_prob,
                                                          config.feature_noise_std, augment_rng),
                                                  config.loss, trainable)
                                 : joint_gradient(result.params, data[idx], config.loss, trainable);
        add_scaled(grads, sample.grads, inv);
        log.loss.ce_fused += inv * sample.loss.ce_fused;
        log.loss.ce_preliminary += inv * sample.loss.ce_preliminary;
        log.loss.ctc += inv * sample.loss.ctc;
        log.loss.total += inv * sample.loss.total;
      }
    } catch (const NumericError& e) {
      throw DivergenceError(std::string("training diverged at step ") + std::to_string(step) + ": " + e.what(),
                            last_good, step);
    }
    if (!std::isfinite(log.loss.total)) {
      throw DivergenceError("training loss became non-finite at step " + std::to_string(step), last_good, step);
    }
    clip(grads, config.clip_norm);
    last_good = result.params;
    adam.step(result.params, grads, update);
    if (ema) {
      const double t = static_cast<double>(step);
      const double d = std::min(config.ema_decay, (1.0 + t) / (10.0 + t));
      for (std::size_t i = 0; i < tensors.size(); ++i) {
        auto avg = ema->tensors()[i].value.values();
        auto cur = tensors[i].value.values();
        for (std::size_t k = 0; k < avg.size(); ++k) avg[k] = d * avg[k] + (1.0 - d) * cur[k];
      }
    }
    result.history.push_back(log);
    if (on_step) on_step(log, ema ? *ema : result.params);
  }
  if (ema) result.params = std::move(*ema);
  return result;
}

MlmSample mlm_gradient(const ModelParams& params, const std::vector<TokenId>& tokens,
                       const std::vector<bool>& masked, TokenId unk) {
  if (tokens.empty()) throw ArgumentError("mlm: empty sequence");
  if (masked.size() != tokens.size()) throw DimensionError("mlm: mask length differs from sequence length");
  const std::size_t V = params.config().vocab_size;
  std::vector<std::size_t> rows, targets;
  Tensor one_hot(tokens.size(), V);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    one_hot(i, masked[i] ? unk : tokens[i]) = 1.0;
    if (masked[i]) {
      rows.push_back(i);
      targets.push_back(tokens[i]);
    }
  }
  MlmSample out;
  if (rows.empty()) {
    out.grads = zero_grads(params);
    return out;
  }
  ad::Tape tape(true);
  graph::BoundParams bound(tape, params, std::vector<ParamGroup>{ParamGroup::kLanguageModel});
  ad::Var h_lm = ad::matmul(tape.constant(std::move(one_hot)), bound["lm.embed"]);
  ad::Var logits = graph::lm_encode(bound, h_lm);
  ad::Var loss = ad::cross_entropy(logits, targets, rows);
  tape.backward(loss);
  out.loss = loss.value().item();
  for (const auto& v : bound.vars()) out.grads.push_back(tape.grad(v));
  return out;
}

std::vector<double> mlm_pretrain(ModelParams& params, const std::vector<std::vector<TokenId>>& corpus,
                                 TokenId unk, const MlmConfig& config) {
  if (corpus.empty()) throw ArgumentError("mlm_pretrain: empty corpus");
  if (!(config.mask_prob >= 0.0 && config.mask_prob <= 1.0)) throw ConfigError("mask_prob must lie in [0, 1]");
  Adam adam(params, config.learning_rate);
  BatchSampler sampler(corpus.size(), config.seed);
  std::bernoulli_distribution mask_draw(config.mask_prob);
  std::vector<bool> update;
  for (const auto& nt : params.tensors()) update.push_back(nt.group == ParamGroup::kLanguageModel);

  std::vector<double> losses;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto batch = sampler.next(config.batch_size);
    const double inv = 1.0 / static_cast<double>(batch.size());
    auto grads = zero_grads(params);
    double loss = 0.0;
    for (std::size_t idx : batch) {
      const auto& seq = corpus[idx];
      std::vector<bool> masked(seq.size());
      for (std::size_t i = 0; i < seq.size(); ++i) masked[i] = mask_draw(sampler.rng());
      MlmSample sample;
      try {
        sample = mlm_gradient(params, seq, masked, unk);
      } catch (const NumericError& e) {
        throw TrainingDivergence(std::string("mlm_pretrain: ") + e.what());
      }
      add_scaled(grads, sample.grads, inv);
      loss += inv * sample.loss;
    }
    if (!std::isfinite(loss)) throw TrainingDivergence("mlm_pretrain: non-finite loss");
    adam.step(params, grads, update);
    losses.push_back(loss);
  }
  return losses;
}

}  // namespace narasr
