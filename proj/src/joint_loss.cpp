#include "narasr/joint_loss.hpp"

#include <string>
#include <vector>

#include "narasr/ctc.hpp"
#include "narasr/errors.hpp"

namespace narasr {

void LossWeights::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(lambda1) || !in_unit(lambda2) || !in_unit(beta)) {
    throw ConfigError("lambda1, lambda2 and beta must lie in [0, 1]");
  }
}

double LossComponents::combine(double ce_fused, double ce_preliminary, double ctc, const LossWeights& w) {
  return (1.0 - w.beta) * (w.lambda1 * ce_fused + w.lambda2 * ce_preliminary) + w.beta * ctc;
}

namespace {

void check_length(std::size_t rows, std::size_t target) {
  if (rows != target) {
    throw ContractViolation("joint_loss: trace has " + std::to_string(rows) +
                            " positions but target has " + std::to_string(target) + " tokens");
  }
}

double mean_cross_entropy(const Tensor& logits, std::span<const TokenId> target) {
  const Tensor lp = log_softmax_rows(logits);
  double total = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) total -= lp(i, target[i]);
  return total / static_cast<double>(target.size());
}

}  // namespace

LossComponents joint_loss(const ForwardTrace& trace, std::span<const TokenId> target,
                          const LossWeights& weights, TokenId blank) {
  weights.validate();
  check_length(trace.L_f.rows(), target.size());
  LossComponents c;
  c.ce_fused = mean_cross_entropy(trace.L_f, target);
  c.ce_preliminary = mean_cross_entropy(trace.L_a, target);
  c.ctc = ctc::ctc_loss(trace.frame_logits, target, blank);
  c.total = LossComponents::combine(c.ce_fused, c.ce_preliminary, c.ctc, weights);
  return c;
}

TracedLoss joint_loss(const graph::TracedForward& forward, std::span<const TokenId> target,
                      const LossWeights& weights, TokenId blank) {
  weights.validate();
  check_length(forward.L_f.rows(), target.size());
  const std::vector<std::size_t> tgt(target.begin(), target.end());
  ad::Var ce_f = ad::cross_entropy(forward.L_f, tgt);
  ad::Var ce_a = ad::cross_entropy(forward.L_a, tgt);
  ad::Var ctc = ctc::ctc_loss(forward.frame_logits, target, blank);
  ad::Var ce = ad::add(ad::scale(ce_f, weights.lambda1), ad::scale(ce_a, weights.lambda2));
  ad::Var total = ad::add(ad::scale(ce, 1.0 - weights.beta), ad::scale(ctc, weights.beta));

  TracedLoss out;
  out.total = total;
  out.components.ce_fused = ce_f.value().item();
  out.components.ce_preliminary = ce_a.value().item();
  out.components.ctc = ctc.value().item();
  out.components.total = total.value().item();
  return out;
}

}  // namespace narasr
