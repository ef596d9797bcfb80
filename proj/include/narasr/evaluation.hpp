#pragma once

#include <atomic>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "narasr/ctc.hpp"
#include "narasr/decoder.hpp"
#include "narasr/metrics.hpp"
#include "narasr/model.hpp"
#include "narasr/synthetic.hpp"
#include "narasr/vocab.hpp"

namespace narasr {

// Result of the single model evaluation made per utterance: encoder, CTC
// branch and length prediction, then the conversion/LM half at L = L_hat.
struct Inference {
  Tensor frame_logits;
  ctc::GreedyResult ctc;
  std::optional<ForwardTrace> trace;  // empty when L_hat == 0
};

// Runs inference over shared read-only parameters. Counts model forward
// passes so callers can check that decoding never re-runs the model.
class Recognizer {
 public:
  Recognizer(const ModelParams& params, const Vocabulary& vocab);

  Inference infer(const Tensor& features) const;

  // Per-position argmax of the fused logits at L = L_hat.
  std::vector<TokenId> greedy(const Inference& inf) const;
  decode::DecodeResult joint(const Inference& inf, const decode::DecodeConfig& config) const;

  std::size_t forward_passes() const { return forward_passes_.load(); }
  const ModelParams& params() const { return params_; }
  const Vocabulary& vocab() const { return vocab_; }

 private:
  const ModelParams& params_;
  const Vocabulary& vocab_;
  mutable std::atomic<std::size_t> forward_passes_{0};
};

enum class DecodeMode { kGreedy, kJoint };
DecodeMode parse_decode_mode(const std::string& s);

struct UtteranceResult {
  std::string id;
  std::vector<TokenId> hypothesis;
  std::size_t forward_passes = 0;
  double seconds = 0.0;
  bool degraded = false;
};

struct CorpusDecodeResult {
  std::vector<UtteranceResult> utterances;  // input order
  ErrorCounts counts;
  double cer = 0.0;
  double mean_seconds = 0.0;
};

// Decodes every utterance, fanning out over `threads` workers (0 = hardware
// concurrency). Results are merged in input order.
CorpusDecodeResult decode_corpus(const ModelParams& params, const Vocabulary& vocab,
                                 const std::vector<Utterance>& data, DecodeMode mode,
                                 const decode::DecodeConfig& config, std::size_t threads = 1);

struct BenchReport {
  std::size_t utterances = 0;
  double greedy_mean_seconds = 0.0;
  double joint_mean_seconds = 0.0;
  double ratio = 0.0;  // joint / greedy
  double greedy_passes_per_utterance = 0.0;
  double joint_passes_per_utterance = 0.0;
  double greedy_cer = 0.0;
  double joint_cer = 0.0;
};

// Single-threaded timing of both decoding modes over the same utterances.
BenchReport bench(const ModelParams& params, const Vocabulary& vocab, const std::vector<Utterance>& data,
                  const decode::DecodeConfig& config);

}  // namespace narasr
