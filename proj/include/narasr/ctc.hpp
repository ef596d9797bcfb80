#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "narasr/autodiff.hpp"
#include "narasr/tensor.hpp"
#include "narasr/vocab.hpp"

namespace narasr::ctc {

// T x V log-softmaxed frame posteriors (natural log).
using FrameLogProbs = Tensor;

FrameLogProbs frame_log_probs(const Tensor& frame_logits);

// Minimum frame count for target: one per label plus a blank between repeats.
std::size_t required_frames(std::span<const TokenId> target);

// Merge adjacent duplicates, then drop blanks.
std::vector<TokenId> collapse(std::span<const TokenId> alignment, TokenId blank = 0);

struct GreedyResult {
  std::vector<TokenId> tokens;
  std::size_t length = 0;  // predicted target length, may be 0
};

GreedyResult ctc_greedy(const Tensor& frame_logits, TokenId blank = 0);

struct LossWithGrad {
  double loss = 0.0;
  Tensor grad;  // d loss / d frame_logits
};

// -log p(target | x) summed over all alignments, log-domain forward DP.
// Throws CtcInfeasible when target needs more frames than available.
double ctc_loss(const Tensor& frame_logits, std::span<const TokenId> target, TokenId blank = 0);
LossWithGrad ctc_loss_with_grad(const Tensor& frame_logits, std::span<const TokenId> target,
                                TokenId blank = 0);
ad::Var ctc_loss(ad::Var frame_logits, std::span<const TokenId> target, TokenId blank = 0);

// DP state for one label prefix. gamma_n[t] / gamma_b[t] hold the log mass of
// alignments of frames [0, t] that collapse to the prefix and end in its last
// label / in blank.
struct CtcPrefixState {
  std::vector<TokenId> prefix;
  std::vector<double> gamma_n;
  std::vector<double> gamma_b;
  // log p(prefix, ... | x); the complete-sequence probability once terminal.
  double prefix_logprob = 0.0;
  bool terminal = false;
};

struct PrefixExtension {
  double alpha_ctc = 0.0;
  CtcPrefixState state;
};

// Incremental prefix probabilities over one utterance. Extending by eos closes
// the prefix and scores the complete sequence; eos is never a CTC label here.
class CtcPrefixScorer {
 public:
  CtcPrefixScorer(FrameLogProbs log_probs, TokenId blank, TokenId eos);

  CtcPrefixState initial_state() const;
  // O(T) per call. Throws UsageError on terminal states, ArgumentError on blank.
  PrefixExtension extend(const CtcPrefixState& state, TokenId c) const;

  std::size_t frames() const { return log_probs_.rows(); }
  const FrameLogProbs& log_probs() const { return log_probs_; }
  TokenId blank() const { return blank_; }
  TokenId eos() const { return eos_; }

 private:
  FrameLogProbs log_probs_;
  TokenId blank_;
  TokenId eos_;
};

CtcPrefixState prefix_init(const CtcPrefixScorer& scorer);
PrefixExtension prefix_extend(const CtcPrefixScorer& scorer, const CtcPrefixState& state,
                              TokenId c);

enum class PrefixMode { kPrefix, kComplete };

// Enumerates all V^T alignments. Refuses instances with more than 65536 paths.
double brute_force_prefix(const FrameLogProbs& log_probs, std::span<const TokenId> prefix,
                          PrefixMode mode = PrefixMode::kPrefix, TokenId blank = 0);

inline constexpr std::size_t kBruteForceMaxPaths = 65536;

}  // namespace narasr::ctc
