#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "narasr/ctc.hpp"
#include "narasr/model.hpp"
#include "narasr/tensor.hpp"
#include "narasr/vocab.hpp"

namespace narasr::decode {

struct DecodeConfig {
  std::size_t beam_width = 10;
  double mu = 0.3;  // CTC weight
  // Hard cap on hypothesis length (eos included). 0 selects max(2*L_hat, L_hat + 10).
  std::size_t max_length = 0;
  double eos_forced_prob = 0.9;
  bool end_detection = true;
  double end_detect_margin = 10.0;
  std::size_t end_detect_window = 3;
  // false: score only the newest token's attention term, as literally written
  // in the pseudocode; true: accumulate it over the hypothesis.
  bool cumulative_attention = true;

  void validate() const;
  std::size_t resolved_max_length(std::size_t predicted_length) const;
};

// Attention scores for all L_hat positions, computed once per utterance.
class ScoreCache {
 public:
  ScoreCache() = default;
  // rows: log-softmaxed fused logits, one per predicted position
  ScoreCache(Tensor att_log_probs, std::size_t vocab_size);

  std::size_t predicted_length() const { return att_log_probs_.rows(); }
  std::size_t vocab_size() const { return vocab_size_; }
  const Tensor& att_log_probs() const { return att_log_probs_; }
  std::size_t forward_pass_count() const { return forward_passes_; }
  void set_forward_pass_count(std::size_t n) { forward_passes_ = n; }

 private:
  Tensor att_log_probs_;
  std::size_t vocab_size_ = 0;
  std::size_t forward_passes_ = 0;
};

// Cache from a forward pass run with L = L_hat. An absent trace means L_hat = 0.
ScoreCache build_cache(const ForwardTrace* trace, std::size_t predicted_length, std::size_t vocab_size);
ScoreCache build_cache(const ForwardTrace& trace, std::size_t predicted_length);

// alpha_f(c) at 1-based position l. Beyond L_hat the distribution is forced:
// eos_forced_prob for eos and (1 - eos_forced_prob) / V for every other token.
double token_score(const ScoreCache& cache, std::size_t position, TokenId c, TokenId eos,
                   const DecodeConfig& config);

struct Hypothesis {
  std::vector<TokenId> tokens;  // ends with eos when complete
  double alpha_ctc = 0.0;
  double alpha_att = 0.0;
  double joint = 0.0;
  ctc::CtcPrefixState ctc_state;

  bool complete(TokenId eos) const { return !tokens.empty() && tokens.back() == eos; }
};

// mu * alpha_ctc + (1 - mu) * alpha_att, with a zero weight dropping its term
// entirely so that -inf parts do not produce NaN.
double joint_score(double alpha_ctc, double alpha_att, double mu);

// Strict ranking: higher joint, then shorter, then lexicographically smaller ids.
bool ranks_before(const Hypothesis& a, const Hypothesis& b);

// Keeps the beam_width best hypotheses under ranks_before, sorted best first.
// Queues already within the beam are left untouched.
void prune(std::vector<Hypothesis>& queue, std::size_t beam_width);

// True when each of the last `window` lengths has completed hypotheses and the
// best of them trails the overall best by more than `margin`.
bool end_detect(std::span<const Hypothesis> completed, std::size_t length, const DecodeConfig& config);

struct DecodeStats {
  std::size_t expansions = 0;      // hypotheses scored
  std::size_t cache_lookups = 0;   // attention scores served from the cache
  std::size_t forced_scores = 0;   // attention scores from eos forcing
  std::size_t steps = 0;           // lengths visited
};

struct DecodeResult {
  Hypothesis best;
  bool degraded = false;  // no hypothesis ended before the length cap
  std::vector<Hypothesis> completed;
  DecodeStats stats;
};

// Length-synchronous joint CTC/attention beam search over cached scores.
DecodeResult joint_decode(const ctc::FrameLogProbs& frame_log_probs, const ScoreCache& cache,
                          TokenId blank, TokenId eos, const DecodeConfig& config);

// Tokens without the trailing eos.
std::vector<TokenId> strip_eos(const std::vector<TokenId>& tokens, TokenId eos);

}  // namespace narasr::decode
