#include "narasr/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "narasr/errors.hpp"

namespace narasr::decode {

void DecodeConfig::validate() const {
  if (beam_width < 1) throw ConfigError("beam_width must be at least 1");
  if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("mu must lie in [0, 1]");
  if (!(eos_forced_prob > 0.0 && eos_forced_prob < 1.0)) {
    throw ConfigError("eos_forced_prob must lie in (0, 1)");
  }
  if (end_detect_window < 1) throw ConfigError("end_detect_window must be at least 1");
  if (!(end_detect_margin >= 0.0)) throw ConfigError("end_detect_margin must be non-negative");
}

std::size_t DecodeConfig::resolved_max_length(std::size_t predicted_length) const {
  if (max_length != 0) return max_length;
  return std::max(2 * predicted_length, predicted_length + 10);
}

ScoreCache::ScoreCache(Tensor att_log_probs, std::size_t vocab_size)
    : att_log_probs_(std::move(att_log_probs)), vocab_size_(vocab_size), forward_passes_(1) {
  if (!att_log_probs_.empty() && att_log_probs_.cols() != vocab_size_) {
    throw DimensionError("score cache: " + std::to_string(att_log_probs_.cols()) +
                         " columns for vocabulary of " + std::to_string(vocab_size_));
  }
}

ScoreCache build_cache(const ForwardTrace* trace, std::size_t predicted_length, std::size_t vocab_size) {
  if (predicted_length == 0) {
    if (trace != nullptr && trace->target_length() != 0) {
      throw ContractViolation("build_cache: predicted length 0 but trace has " +
                              std::to_string(trace->target_length()) + " rows");
    }
    return ScoreCache(Tensor(), vocab_size);
  }
  if (trace == nullptr) throw ContractViolation("build_cache: no forward trace for a non-empty prediction");
  if (trace->L_f.rows() != predicted_length) {
    throw ContractViolation("build_cache: fused logits have " + std::to_string(trace->L_f.rows()) +
                            " rows, predicted length is " + std::to_string(predicted_length));
  }
  if (trace->L_f.cols() != vocab_size) throw DimensionError("build_cache: vocabulary size mismatch");
  return ScoreCache(log_softmax_rows(trace->L_f), vocab_size);
}

ScoreCache build_cache(const ForwardTrace& trace, std::size_t predicted_length) {
  return build_cache(&trace, predicted_length, trace.L_f.cols());
}

double token_score(const ScoreCache& cache, std::size_t position, TokenId c, TokenId eos,
                   const DecodeConfig& config) {
  if (position < 1) throw ArgumentError("token_score: positions are 1-based");
  if (position <= cache.predicted_length()) return cache.att_log_probs()(position - 1, c);
  if (c == eos) return std::log(config.eos_forced_prob);
  return std::log((1.0 - config.eos_forced_prob) / static_cast<double>(cache.vocab_size()));
}

double joint_score(double alpha_ctc, double alpha_att, double mu) {
  double s = 0.0;
  if (mu > 0.0) s += mu * alpha_ctc;
  if (mu < 1.0) s += (1.0 - mu) * alpha_att;
  return s;
}

bool ranks_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.joint != b.joint) return a.joint > b.joint;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

void prune(std::vector<Hypothesis>& queue, std::size_t beam_width) {
  if (queue.size() <= beam_width) return;
  std::partial_sort(queue.begin(), queue.begin() + static_cast<std::ptrdiff_t>(beam_width), queue.end(),
                    ranks_before);
  queue.erase(queue.begin() + static_cast<std::ptrdiff_t>(beam_width), queue.end());
}

bool end_detect(std::span<const Hypothesis> completed, std::size_t length, const DecodeConfig& config) {
  if (completed.empty()) return false;
  double best = kNegInf;
  for (const auto& h : completed) best = std::max(best, h.joint);
  std::size_t count = 0;
  for (std::size_t m = 0; m < config.end_detect_window; ++m) {
    if (length < m + 1) break;
    const std::size_t len = length - m;
    double best_here = kNegInf;
    bool any = false;
    for (const auto& h : completed) {
      if (h.tokens.size() == len) {
        any = true;
        best_here = std::max(best_here, h.joint);
      }
    }
    if (any && best_here - best < -config.end_detect_margin) ++count;
  }
  return count == config.end_detect_window;
}

std::vector<TokenId> strip_eos(const std::vector<TokenId>& tokens, TokenId eos) {
  std::vector<TokenId> out = tokens;
  if (!out.empty() && out.back() == eos) out.pop_back();
  return out;
}

namespace {

Hypothesis extend(const ctc::CtcPrefixScorer& scorer, const ScoreCache& cache, const Hypothesis& g,
                  TokenId c, std::size_t position, TokenId eos, const DecodeConfig& config,
                  DecodeStats& stats) {
  auto ext = scorer.extend(g.ctc_state, c);
  const double att = token_score(cache, position, c, eos, config);
  if (position <= cache.predicted_length()) {
    ++stats.cache_lookups;
  } else {
    ++stats.forced_scores;
  }
  ++stats.expansions;
  Hypothesis h;
  h.tokens = g.tokens;
  h.tokens.push_back(c);
  h.alpha_ctc = ext.alpha_ctc;
  h.alpha_att = config.cumulative_attention ? g.alpha_att + att : att;
  h.joint = joint_score(h.alpha_ctc, h.alpha_att, config.mu);
  h.ctc_state = std::move(ext.state);
  return h;
}

}  // namespace

DecodeResult joint_decode(const ctc::FrameLogProbs& frame_log_probs, const ScoreCache& cache,
                          TokenId blank, TokenId eos, const DecodeConfig& config) {
  config.validate();
  if (frame_log_probs.rows() == 0) throw ArgumentError("joint_decode: no frames");
  const std::size_t V = frame_log_probs.cols();
  if (cache.vocab_size() != V) {
    throw DimensionError("joint_decode: cache vocabulary " + std::to_string(cache.vocab_size()) +
                         " vs frame posteriors " + std::to_string(V));
  }
  if (blank >= V || eos >= V) throw ArgumentError("joint_decode: blank/eos ids out of range");

  const ctc::CtcPrefixScorer scorer(frame_log_probs, blank, eos);
  const std::size_t max_len = config.resolved_max_length(cache.predicted_length());

  DecodeResult result;
  std::vector<Hypothesis> previous(1);
  previous[0].ctc_state = scorer.initial_state();
  std::vector<Hypothesis> current;

  for (std::size_t l = 1; l <= max_len; ++l) {
    ++result.stats.steps;
    current.clear();
    current.reserve(previous.size() * (V - 1));
    for (const Hypothesis& g : previous) {
      for (TokenId c = 0; c < V; ++c) {
        if (c == blank) continue;
        Hypothesis h = extend(scorer, cache, g, c, l, eos, config, result.stats);
        if (c == eos) {
          result.completed.push_back(std::move(h));
        } else {
          current.push_back(std::move(h));
        }
      }
    }
    prune(current, config.beam_width);
    if (config.end_detection && end_detect(result.completed, l, config)) break;
    if (current.empty()) break;
    previous.swap(current);
  }

  if (!result.completed.empty()) {
    result.best = *std::min_element(result.completed.begin(), result.completed.end(), ranks_before);
    return result;
  }
  // Nothing ended before the cap: close the best surviving prefix.
  result.degraded = true;
  const Hypothesis& g = *std::min_element(previous.begin(), previous.end(), ranks_before);
  result.best = extend(scorer, cache, g, eos, g.tokens.size() + 1, eos, config, result.stats);
  return result;
}

}  // namespace narasr::decode
