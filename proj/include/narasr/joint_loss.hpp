#pragma once

#include <span>

#include "narasr/autodiff.hpp"
#include "narasr/model.hpp"
#include "narasr/vocab.hpp"

namespace narasr {

struct LossWeights {
  double lambda1 = 0.5;  // CE on fused logits
  double lambda2 = 0.5;  // CE on preliminary logits
  double beta = 0.3;     // CTC weight

  void validate() const;
};

struct LossComponents {
  double ce_fused = 0.0;
  double ce_preliminary = 0.0;
  double ctc = 0.0;
  double total = 0.0;

  // (1 - beta) * (lambda1 * ce_fused + lambda2 * ce_preliminary) + beta * ctc
  static double combine(double ce_fused, double ce_preliminary, double ctc, const LossWeights& w);
};

// CE terms are means over the L target positions. The trace must have been
// produced with L = |target|.
LossComponents joint_loss(const ForwardTrace& trace, std::span<const TokenId> target,
                          const LossWeights& weights, TokenId blank = 0);

struct TracedLoss {
  ad::Var total;
  LossComponents components;
};

TracedLoss joint_loss(const graph::TracedForward& forward, std::span<const TokenId> target,
                      const LossWeights& weights, TokenId blank = 0);

}  // namespace narasr
