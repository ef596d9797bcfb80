#include "narasr/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "narasr/errors.hpp"

namespace narasr::ctc {

FrameLogProbs frame_log_probs(const Tensor& frame_logits) { return log_softmax_rows(frame_logits); }

std::size_t required_frames(std::span<const TokenId> target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

std::vector<TokenId> collapse(std::span<const TokenId> alignment, TokenId blank) {
  std::vector<TokenId> out;
  for (std::size_t t = 0; t < alignment.size(); ++t) {
    if (t > 0 && alignment[t] == alignment[t - 1]) continue;
    if (alignment[t] != blank) out.push_back(alignment[t]);
  }
  return out;
}

GreedyResult ctc_greedy(const Tensor& frame_logits, TokenId blank) {
  std::vector<TokenId> best(frame_logits.rows());
  for (std::size_t t = 0; t < frame_logits.rows(); ++t) best[t] = argmax(frame_logits.row(t));
  GreedyResult r;
  r.tokens = collapse(best, blank);
  r.length = r.tokens.size();
  return r;
}

namespace {

void check_target(const Tensor& logits, std::span<const TokenId> target, TokenId blank) {
  if (logits.rows() == 0) throw ArgumentError("ctc_loss: no frames");
  for (TokenId id : target) {
    if (id == blank) throw ArgumentError("ctc_loss: target contains blank");
    if (id >= logits.cols()) throw ArgumentError("ctc_loss: target id out of range");
  }
  const std::size_t need = required_frames(target);
  if (need > logits.rows()) {
    throw CtcInfeasible("ctc_loss: target needs " + std::to_string(need) + " frames, have " +
                        std::to_string(logits.rows()));
  }
}

// Interleaves blanks: b l1 b l2 ... lU b
std::vector<TokenId> extended_labels(std::span<const TokenId> target, TokenId blank) {
  std::vector<TokenId> ext(2 * target.size() + 1, blank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  return ext;
}

// alpha[t*S + s]: log mass of prefixes of paths in [0, t] ending at ext[s].
std::vector<double> forward_table(const FrameLogProbs& lp, const std::vector<TokenId>& ext,
                                  TokenId blank) {
  const std::size_t T = lp.rows(), S = ext.size();
  std::vector<double> alpha(T * S, kNegInf);
  alpha[0] = lp(0, ext[0]);
  if (S > 1) alpha[1] = lp(0, ext[1]);
  for (std::size_t t = 1; t < T; ++t) {
    const double* prev = &alpha[(t - 1) * S];
    double* cur = &alpha[t * S];
    for (std::size_t s = 0; s < S; ++s) {
      double acc = prev[s];
      if (s >= 1) acc = log_add(acc, prev[s - 1]);
      if (s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]) acc = log_add(acc, prev[s - 2]);
      cur[s] = acc == kNegInf ? kNegInf : acc + lp(t, ext[s]);
    }
  }
  return alpha;
}

std::vector<double> backward_table(const FrameLogProbs& lp, const std::vector<TokenId>& ext,
                                   TokenId blank) {
  const std::size_t T = lp.rows(), S = ext.size();
  std::vector<double> beta(T * S, kNegInf);
  beta[(T - 1) * S + S - 1] = lp(T - 1, ext[S - 1]);
  if (S > 1) beta[(T - 1) * S + S - 2] = lp(T - 1, ext[S - 2]);
  for (std::size_t t = T - 1; t-- > 0;) {
    const double* next = &beta[(t + 1) * S];
    double* cur = &beta[t * S];
    for (std::size_t s = 0; s < S; ++s) {
      double acc = next[s];
      if (s + 1 < S) acc = log_add(acc, next[s + 1]);
      if (s + 2 < S && ext[s] != blank && ext[s] != ext[s + 2]) acc = log_add(acc, next[s + 2]);
      cur[s] = acc == kNegInf ? kNegInf : acc + lp(t, ext[s]);
    }
  }
  return beta;
}

double total_logprob(const std::vector<double>& alpha, std::size_t T, std::size_t S) {
  const double* last = &alpha[(T - 1) * S];
  return S > 1 ? log_add(last[S - 1], last[S - 2]) : last[S - 1];
}

}  // namespace

double ctc_loss(const Tensor& frame_logits, std::span<const TokenId> target, TokenId blank) {
  check_target(frame_logits, target, blank);
  const FrameLogProbs lp = frame_log_probs(frame_logits);
  const auto ext = extended_labels(target, blank);
  const auto alpha = forward_table(lp, ext, blank);
  return -total_logprob(alpha, lp.rows(), ext.size());
}

LossWithGrad ctc_loss_with_grad(const Tensor& frame_logits, std::span<const TokenId> target,
                                TokenId blank) {
  check_target(frame_logits, target, blank);
  const FrameLogProbs lp = frame_log_probs(frame_logits);
  const std::size_t T = lp.rows(), V = lp.cols();
  const auto ext = extended_labels(target, blank);
  const std::size_t S = ext.size();
  const auto alpha = forward_table(lp, ext, blank);
  const auto beta = backward_table(lp, ext, blank);
  const double logp = total_logprob(alpha, T, S);

  LossWithGrad out;
  out.loss = -logp;
  out.grad = Tensor(T, V);
  std::vector<double> occupancy(V);
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(occupancy.begin(), occupancy.end(), kNegInf);
    for (std::size_t s = 0; s < S; ++s) {
      const double a = alpha[t * S + s], b = beta[t * S + s];
      if (a == kNegInf || b == kNegInf) continue;
      // both tables include the emission at t, so remove one copy
      occupancy[ext[s]] = log_add(occupancy[ext[s]], a + b - lp(t, ext[s]));
    }
    for (std::size_t k = 0; k < V; ++k) {
      const double post = occupancy[k] == kNegInf ? 0.0 : std::exp(occupancy[k] - logp);
      out.grad(t, k) = std::exp(lp(t, k)) - post;
    }
  }
  return out;
}

ad::Var ctc_loss(ad::Var frame_logits, std::span<const TokenId> target, TokenId blank) {
  auto [loss, grad] = ctc_loss_with_grad(frame_logits.value(), target, blank);
  ad::Var ins[] = {frame_logits};
  return frame_logits.tape()->record(
      Tensor::scalar(loss), ins, [frame_logits, g = std::move(grad)](const Tensor& up, ad::Tape& tp) {
        Tensor scaled = g;
        const double s = up.item();
        for (double& v : scaled.values()) v *= s;
        tp.accumulate(frame_logits, scaled);
      });
}

CtcPrefixScorer::CtcPrefixScorer(FrameLogProbs log_probs, TokenId blank, TokenId eos)
    : log_probs_(std::move(log_probs)), blank_(blank), eos_(eos) {
  if (log_probs_.rows() == 0) throw ArgumentError("prefix scorer: no frames");
  if (blank_ >= log_probs_.cols()) throw ArgumentError("prefix scorer: blank id out of range");
  if (blank_ == eos_) throw ArgumentError("prefix scorer: blank and eos must differ");
}

CtcPrefixState CtcPrefixScorer::initial_state() const {
  const std::size_t T = frames();
  CtcPrefixState s;
  s.gamma_n.assign(T, kNegInf);
  s.gamma_b.assign(T, kNegInf);
  double acc = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    acc += log_probs_(t, blank_);
    s.gamma_b[t] = acc;
  }
  s.prefix_logprob = 0.0;
  return s;
}

PrefixExtension CtcPrefixScorer::extend(const CtcPrefixState& g, TokenId c) const {
  if (g.terminal) throw UsageError("prefix_extend: state already ended with eos");
  if (c == blank_) throw ArgumentError("prefix_extend: cannot extend by blank");
  const std::size_t T = frames();
  if (g.gamma_n.size() != T || g.gamma_b.size() != T) {
    throw ArgumentError("prefix_extend: state belongs to a different utterance");
  }

  PrefixExtension out;
  out.state.prefix = g.prefix;
  if (c == eos_) {
    out.alpha_ctc = log_add(g.gamma_n[T - 1], g.gamma_b[T - 1]);
    out.state.gamma_n = g.gamma_n;
    out.state.gamma_b = g.gamma_b;
    out.state.prefix_logprob = out.alpha_ctc;
    out.state.terminal = true;
    return out;
  }
  if (c >= log_probs_.cols()) throw ArgumentError("prefix_extend: token id out of range");

  const bool repeat = !g.prefix.empty() && g.prefix.back() == c;
  auto& rn = out.state.gamma_n;
  auto& rb = out.state.gamma_b;
  rn.assign(T, kNegInf);
  rb.assign(T, kNegInf);
  // Mass of g available right before c is emitted at t+1. For a repeated label
  // only paths ending in blank may continue.
  auto phi = [&](std::size_t t) { return repeat ? g.gamma_b[t] : log_add(g.gamma_b[t], g.gamma_n[t]); };

  rn[0] = g.prefix.empty() ? log_probs_(0, c) : kNegInf;
  double psi = rn[0];
  for (std::size_t t = 1; t < T; ++t) {
    const double emit = log_probs_(t, c);
    const double ph = phi(t - 1);
    rn[t] = log_add(rn[t - 1], ph) + emit;
    rb[t] = log_add(rb[t - 1], rn[t - 1]) + log_probs_(t, blank_);
    psi = log_add(psi, ph + emit);
  }
  out.state.prefix.push_back(c);
  out.state.prefix_logprob = psi;
  out.alpha_ctc = psi;
  return out;
}

CtcPrefixState prefix_init(const CtcPrefixScorer& scorer) { return scorer.initial_state(); }

PrefixExtension prefix_extend(const CtcPrefixScorer& scorer, const CtcPrefixState& state,
                              TokenId c) {
  return scorer.extend(state, c);
}

double brute_force_prefix(const FrameLogProbs& log_probs, std::span<const TokenId> prefix,
                          PrefixMode mode, TokenId blank) {
  const std::size_t T = log_probs.rows(), V = log_probs.cols();
  if (T == 0 || V == 0) throw ArgumentError("brute_force_prefix: empty posterior matrix");
  double paths = 1.0;
  for (std::size_t t = 0; t < T; ++t) paths *= static_cast<double>(V);
  if (paths > static_cast<double>(kBruteForceMaxPaths)) {
    throw ArgumentError("brute_force_prefix: " + std::to_string(V) + "^" + std::to_string(T) +
                        " alignments is too many to enumerate");
  }
  std::vector<TokenId> path(T, 0);
  std::vector<double> matching;
  while (true) {
    const auto out = collapse(path, blank);
    const bool hit = mode == PrefixMode::kComplete
                         ? std::equal(out.begin(), out.end(), prefix.begin(), prefix.end())
                         : out.size() >= prefix.size() &&
                               std::equal(prefix.begin(), prefix.end(), out.begin());
    if (hit) {
      double lp = 0.0;
      for (std::size_t t = 0; t < T; ++t) lp += log_probs(t, path[t]);
      matching.push_back(lp);
    }
    std::size_t pos = 0;
    while (pos < T && ++path[pos] == V) path[pos++] = 0;
    if (pos == T) break;
  }
  return matching.empty() ? kNegInf : log_sum_exp(matching);
}

}  // namespace narasr::ctc
