#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "narasr/ctc.hpp"
#include "narasr/errors.hpp"

using namespace narasr;
using namespace narasr::ctc;

namespace {

Tensor random_logits(std::size_t T, std::size_t V, std::mt19937_64& rng, double scale = 2.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(T, V);
  for (double& v : t.values()) v = n(rng);
  return t;
}

// Sum of path probabilities by collapsed output, in probability space.
std::map<std::vector<TokenId>, double> enumerate_outputs(const FrameLogProbs& lp) {
  std::map<std::vector<TokenId>, double> mass;
  const std::size_t T = lp.rows(), V = lp.cols();
  std::vector<TokenId> path(T, 0);
  while (true) {
    double p = 1.0;
    for (std::size_t t = 0; t < T; ++t) p *= std::exp(lp(t, path[t]));
    // collapse written out again here
    std::vector<TokenId> out;
    TokenId last = V;
    for (TokenId s : path) {
      if (s != last && s != 0) out.push_back(s);
      last = s;
    }
    mass[out] += p;
    std::size_t pos = 0;
    while (pos < T && ++path[pos] == V) path[pos++] = 0;
    if (pos == T) break;
  }
  return mass;
}

double prefix_mass(const std::map<std::vector<TokenId>, double>& mass, const std::vector<TokenId>& prefix) {
  double p = 0.0;
  for (const auto& [seq, m] : mass)
    if (seq.size() >= prefix.size() && std::equal(prefix.begin(), prefix.end(), seq.begin())) p += m;
  return p;
}

Tensor uniform(std::size_t T, std::size_t V) { return frame_log_probs(Tensor(T, V)); }

std::vector<TokenId> ids(std::initializer_list<TokenId> l) { return l; }

}  // namespace

TEST(CtcLoss, SingleFrame) {
  EXPECT_NEAR(ctc_loss(Tensor(1, 2), ids({1})), -std::log(0.5), 1e-15);
}

TEST(CtcLoss, TwoFramesThreePaths) {
  EXPECT_NEAR(ctc_loss(Tensor(2, 2), ids({1})), -std::log(0.75), 1e-15);
}

TEST(CtcLoss, RepeatNeedsBlankGap) {
  EXPECT_THROW(ctc_loss(Tensor(2, 2), ids({1, 1})), CtcInfeasible);
  EXPECT_NO_THROW(ctc_loss(Tensor(3, 2), ids({1, 1})));
  EXPECT_EQ(required_frames(ids({1, 1, 2, 2, 2})), 8u);
}

TEST(CtcLoss, RejectsBlankInTarget) {
  EXPECT_THROW(ctc_loss(Tensor(3, 3), ids({1, 0})), ArgumentError);
}

TEST(CtcLoss, EmptyTargetIsAllBlank) {
  Tensor logits = Tensor::from_rows({{0.3, -1.0}, {2.0, 0.5}});
  auto lp = frame_log_probs(logits);
  EXPECT_NEAR(ctc_loss(logits, ids({})), -(lp(0, 0) + lp(1, 0)), 1e-14);
}

TEST(CtcLoss, MatchesEnumeration) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = 1 + trial % 6, V = 2 + trial % 3;
    Tensor logits = random_logits(T, V, rng);
    auto mass = enumerate_outputs(frame_log_probs(logits));
    for (const auto& [seq, m] : mass) {
      if (seq.empty()) continue;
      EXPECT_NEAR(std::exp(-ctc_loss(logits, seq)), m, 1e-12);
    }
  }
}

TEST(CtcLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor logits = random_logits(7, 4, rng);
    const auto target = ids({1, 3, 3});
    ad::ScalarFn f = [&](ad::Tape&, std::span<const ad::Var> p) { return ctc_loss(p[0], target); };
    // at eps 1e-5 the O(10) loss leaves ~1e-10 of roundoff per difference
    ad::GradCheckOptions opts;
    opts.eps = 1e-4;
    EXPECT_LE(ad::grad_check(f, std::vector<Tensor>{logits}, opts), 1e-6);
    auto lg = ctc_loss_with_grad(logits, target);
    EXPECT_NEAR(lg.loss, ctc_loss(logits, target), 1e-12);
    for (std::size_t t = 0; t < 7; ++t) {
      double row = 0.0;
      for (std::size_t v = 0; v < 4; ++v) row += lg.grad(t, v);
      EXPECT_NEAR(row, 0.0, 1e-12);  // softmax minus a distribution
    }
  }
}

TEST(Collapse, Examples) {
  EXPECT_EQ(collapse(ids({0, 0})), ids({}));
  EXPECT_EQ(collapse(ids({1, 1, 0, 1})), ids({1, 1}));
  EXPECT_EQ(collapse(ids({1, 2, 2, 0, 2})), ids({1, 2, 2}));
}

TEST(CtcGreedy, AllBlank) {
  Tensor logits(3, 3);
  for (std::size_t t = 0; t < 3; ++t) logits(t, 0) = 1.0;
  auto r = ctc_greedy(logits);
  EXPECT_TRUE(r.tokens.empty());
  EXPECT_EQ(r.length, 0u);
}

TEST(CtcGreedy, CollapseSemantics) {
  Tensor logits(4, 2);
  for (std::size_t t : {0u, 1u, 3u}) logits(t, 1) = 1.0;
  logits(2, 0) = 1.0;
  auto r = ctc_greedy(logits);
  EXPECT_EQ(r.tokens, ids({1, 1}));
  EXPECT_EQ(r.length, 2u);
}

TEST(CtcGreedy, EqualsComposedPrimitives) {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 50; ++i) {
    Tensor logits = random_logits(12, 5, rng, 1.0);
    std::vector<TokenId> best;
    for (std::size_t t = 0; t < logits.rows(); ++t) best.push_back(argmax(logits.row(t)));
    EXPECT_EQ(ctc_greedy(logits).tokens, collapse(best));
  }
}

TEST(PrefixScorer, InitialState) {
  CtcPrefixScorer scorer(uniform(2, 2), 0, 2);
  auto s = prefix_init(scorer);
  EXPECT_EQ(s.prefix_logprob, 0.0);
  EXPECT_NEAR(s.gamma_b[0], std::log(0.5), 1e-15);
  EXPECT_NEAR(s.gamma_b[1], std::log(0.25), 1e-15);
  for (double g : s.gamma_n) EXPECT_EQ(g, kNegInf);
}

TEST(PrefixScorer, ExtendByToken) {
  CtcPrefixScorer scorer(uniform(2, 2), 0, 2);
  auto r = prefix_extend(scorer, prefix_init(scorer), 1);
  EXPECT_NEAR(r.alpha_ctc, std::log(0.75), 1e-15);
  EXPECT_EQ(r.state.prefix, ids({1}));
}

TEST(PrefixScorer, ExtendByEosScoresEmptySequence) {
  CtcPrefixScorer scorer(uniform(2, 2), 0, 2);
  auto r = prefix_extend(scorer, prefix_init(scorer), 2);
  EXPECT_NEAR(r.alpha_ctc, std::log(0.25), 1e-15);
  EXPECT_TRUE(r.state.terminal);
}

TEST(PrefixScorer, TerminalAndBlankExtensionsRejected) {
  CtcPrefixScorer scorer(uniform(3, 3), 0, 3);
  auto done = prefix_extend(scorer, prefix_init(scorer), 3).state;
  EXPECT_THROW(prefix_extend(scorer, done, 1), UsageError);
  EXPECT_THROW(prefix_extend(scorer, prefix_init(scorer), 0), ArgumentError);
}

TEST(PrefixScorer, EosNeverExceedsPrefixMass) {
  std::mt19937_64 rng(24);
  for (int i = 0; i < 200; ++i) {
    CtcPrefixScorer scorer(frame_log_probs(random_logits(6, 4, rng)), 0, 4);
    auto s = prefix_init(scorer);
    std::uniform_int_distribution<TokenId> tok(1, 3);
    for (int k = 0; k < 3; ++k) {
      auto next = prefix_extend(scorer, s, tok(rng));
      EXPECT_LE(next.alpha_ctc, s.prefix_logprob + 1e-12);  // monotone in extension
      EXPECT_LE(prefix_extend(scorer, next.state, 4).alpha_ctc, next.alpha_ctc + 1e-12);
      s = next.state;
    }
  }
}

TEST(PrefixScorer, ChainMatchesEnumeration) {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t V = 2 + trial % 2, T = 1 + trial % 6;
    const TokenId eos = V;
    FrameLogProbs lp = frame_log_probs(random_logits(T, V, rng));
    auto mass = enumerate_outputs(lp);
    CtcPrefixScorer scorer(lp, 0, eos);
    // all prefixes of length <= 3 over the non-blank labels
    std::vector<std::pair<std::vector<TokenId>, CtcPrefixState>> frontier{{{}, prefix_init(scorer)}};
    for (int depth = 0; depth < 3; ++depth) {
      std::vector<std::pair<std::vector<TokenId>, CtcPrefixState>> next;
      for (const auto& [prefix, state] : frontier) {
        const double complete = prefix_extend(scorer, state, eos).alpha_ctc;
        const double want_complete = mass.count(prefix) ? mass.at(prefix) : 0.0;
        EXPECT_NEAR(std::exp(complete), want_complete, 1e-12);
        for (TokenId c = 1; c < V; ++c) {
          auto ext = prefix_extend(scorer, state, c);
          auto p = prefix;
          p.push_back(c);
          EXPECT_NEAR(std::exp(ext.alpha_ctc), prefix_mass(mass, p), 1e-12);
          EXPECT_NEAR(std::exp(ext.alpha_ctc), std::exp(brute_force_prefix(lp, p)), 1e-12);
          next.emplace_back(p, ext.state);
        }
      }
      frontier = std::move(next);
    }
  }
}

TEST(PrefixScorer, Decomposition) {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t V = 4, T = 5;
    const TokenId eos = V;
    CtcPrefixScorer scorer(frame_log_probs(random_logits(T, V, rng)), 0, eos);
    auto s = prefix_init(scorer);
    for (int depth = 0; depth < 2; ++depth) {
      double total = std::exp(prefix_extend(scorer, s, eos).alpha_ctc);
      for (TokenId c = 1; c < V; ++c) total += std::exp(prefix_extend(scorer, s, c).alpha_ctc);
      EXPECT_NEAR(total, std::exp(s.prefix_logprob), 1e-12);
      s = prefix_extend(scorer, s, 1 + trial % 3).state;
    }
  }
}

TEST(BruteForce, EmptyPrefixHasFullMass) {
  std::mt19937_64 rng(27);
  EXPECT_NEAR(brute_force_prefix(frame_log_probs(random_logits(5, 3, rng)), ids({})), 0.0, 1e-12);
}

TEST(BruteForce, CompleteMatchesLoss) {
  std::mt19937_64 rng(28);
  for (int i = 0; i < 50; ++i) {
    Tensor logits = random_logits(6, 3, rng);
    const auto target = ids({1, 2, 2});
    EXPECT_NEAR(std::exp(brute_force_prefix(frame_log_probs(logits), target, PrefixMode::kComplete)),
                std::exp(-ctc_loss(logits, target)), 1e-12);
  }
}

TEST(BruteForce, PartitionOfUnity) {
  std::mt19937_64 rng(29);
  for (std::size_t T = 1; T <= 5; ++T) {
    for (std::size_t V = 2; V <= 3; ++V) {
      FrameLogProbs lp = frame_log_probs(random_logits(T, V, rng));
      double total = 0.0;
      for (const auto& [seq, m] : enumerate_outputs(lp)) {
        total += std::exp(brute_force_prefix(lp, seq, PrefixMode::kComplete));
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(BruteForce, RefusesLargeInstances) {
  EXPECT_THROW(brute_force_prefix(uniform(9, 4), ids({1})), ArgumentError);
  EXPECT_NO_THROW(brute_force_prefix(uniform(8, 4), ids({1})));
}
