#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "narasr/autodiff.hpp"
#include "narasr/errors.hpp"
#include "oracles.hpp"

using namespace narasr;
using namespace narasr::ad;

namespace {

using oracle::random_tensor;

using RawAttention = oracle::AttentionParams;

RawAttention random_attention(std::size_t d, std::mt19937_64& rng) {
  return {random_tensor(d, d, rng), random_tensor(1, d, rng), random_tensor(d, d, rng), random_tensor(1, d, rng),
          random_tensor(d, d, rng), random_tensor(1, d, rng), random_tensor(d, d, rng), random_tensor(1, d, rng)};
}

AttentionWeights bind(Tape& tape, const RawAttention& w) {
  return {tape.constant(w.wq), tape.constant(w.bq), tape.constant(w.wk), tape.constant(w.bk),
          tape.constant(w.wv), tape.constant(w.bv), tape.constant(w.wo), tape.constant(w.bo)};
}

}  // namespace

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Var x = tape.variable(Tensor::from_rows({{1, 2, 3}, {4, 5, 6}}));
  tape.backward(sum(x));
  EXPECT_EQ(tape.grad(x), Tensor(2, 3, 1.0));
}

TEST(Backward, SquareOfThree) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(3.0));
  tape.backward(mul(x, x));
  EXPECT_DOUBLE_EQ(tape.grad(x).item(), 6.0);
}

TEST(Backward, NonScalarLossRejected) {
  Tape tape;
  Var x = tape.variable(Tensor(2, 2, 1.0));
  EXPECT_THROW(tape.backward(x), ArgumentError);
}

TEST(Backward, UntouchedParameterGetsZeroGradient) {
  Tape tape;
  Var x = tape.variable(Tensor(1, 3, 2.0));
  Var unused = tape.variable(Tensor(2, 2, 5.0));
  tape.backward(sum(x));
  EXPECT_EQ(tape.grad(unused), Tensor(2, 2, 0.0));
}

TEST(Backward, ReusedNodeAccumulates) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(2.0));
  Var y = add(mul(x, x), scale(x, 3.0));  // x^2 + 3x
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(x).item(), 7.0);
}

TEST(Backward, ConstantsStayOffTheGraph) {
  Tape tape;
  Var c = tape.constant(Tensor(1, 2, 1.0));
  Var x = tape.variable(Tensor(1, 2, 3.0));
  tape.backward(sum(mul(c, x)));
  EXPECT_FALSE(c.requires_grad());
  EXPECT_EQ(tape.grad(x), Tensor(1, 2, 1.0));
}

TEST(Forward, NonFiniteResultIsAnError) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(1e300));
  EXPECT_THROW(mul(x, x), NumericError);
}

TEST(Attention, HeadsMustDivideDimension) {
  std::mt19937_64 rng(1);
  Tape tape;
  auto w = bind(tape, random_attention(6, rng));
  Var q = tape.constant(random_tensor(2, 6, rng));
  EXPECT_THROW(multi_head_attention(q, q, q, 4, w), ConfigError);
}

TEST(Attention, ZeroQueryProjectionAveragesValues) {
  std::mt19937_64 rng(2);
  const std::size_t d = 4, T = 5;
  RawAttention raw = random_attention(d, rng);
  raw.wq.fill(0.0);
  raw.bq.fill(0.0);
  raw.wo = Tensor::identity(d);
  raw.bo.fill(0.0);
  Tape tape;
  Tensor q = random_tensor(3, d, rng), kv = random_tensor(T, d, rng);
  Var out = multi_head_attention(tape.constant(q), tape.constant(kv), tape.constant(kv), 2, bind(tape, raw));
  Tensor vp = oracle::affine(kv, raw.wv, raw.bv);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (std::size_t t = 0; t < T; ++t) mean += vp(t, j) / T;
      EXPECT_NEAR(out.value()(i, j), mean, 1e-12);
    }
}

TEST(Attention, SingleKeyCopiesValueRow) {
  std::mt19937_64 rng(3);
  const std::size_t d = 4;
  RawAttention raw = random_attention(d, rng);
  Tape tape;
  Tensor q = random_tensor(4, d, rng), kv = random_tensor(1, d, rng);
  Var out = multi_head_attention(tape.constant(q), tape.constant(kv), tape.constant(kv), 2, bind(tape, raw));
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(out.value()(i, j), out.value()(0, j), 1e-12);
}

TEST(Attention, MatchesPerHeadLoop) {
  std::mt19937_64 rng(4);
  for (std::size_t heads : {1u, 2u, 4u}) {
    const std::size_t d = 8;
    RawAttention raw = random_attention(d, rng);
    Tensor q = random_tensor(3, d, rng), k = random_tensor(6, d, rng), v = random_tensor(6, d, rng);
    Tape tape;
    Var out = multi_head_attention(tape.constant(q), tape.constant(k), tape.constant(v), heads, bind(tape, raw));
    Tensor want = oracle::attention(q, k, v, heads, raw);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(out.value()[i], want[i], 1e-10);
  }
}

TEST(Attention, KeyValuePermutationInvariance) {
  std::mt19937_64 rng(5);
  const std::size_t d = 8, T = 7;
  RawAttention raw = random_attention(d, rng);
  Tensor q = random_tensor(3, d, rng), k = random_tensor(T, d, rng), v = random_tensor(T, d, rng);
  std::vector<std::size_t> perm(T);
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor kp(T, d), vp(T, d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < d; ++j) {
      kp(t, j) = k(perm[t], j);
      vp(t, j) = v(perm[t], j);
    }
  Tape tape;
  auto w = bind(tape, raw);
  Var a = multi_head_attention(tape.constant(q), tape.constant(k), tape.constant(v), 2, w);
  Var b = multi_head_attention(tape.constant(q), tape.constant(kp), tape.constant(vp), 2, w);
  for (std::size_t i = 0; i < a.value().size(); ++i) EXPECT_NEAR(a.value()[i], b.value()[i], 1e-12);
}

TEST(GradCheck, LinearIsExact) {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor(3, 4, rng), w = random_tensor(4, 2, rng);
  ScalarFn f = [&](Tape& tape, std::span<const Var> p) {
    return sum(matmul(tape.constant(x), p[0]));
  };
  // central differences are exact on a linear map, a wide step keeps roundoff out
  GradCheckOptions opts;
  opts.eps = 1e-2;
  EXPECT_LE(grad_check(f, std::vector<Tensor>{w}, opts), 1e-10);
}

TEST(GradCheck, SoftmaxCrossEntropy) {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor(4, 5, rng), w = random_tensor(5, 6, rng);
  const std::vector<std::size_t> targets{0, 3, 5, 2};
  ScalarFn f = [&](Tape& tape, std::span<const Var> p) {
    return cross_entropy(matmul(tape.constant(x), p[0]), targets);
  };
  GradCheckOptions opts;
  opts.eps = 1e-5;
  EXPECT_LE(grad_check(f, std::vector<Tensor>{w}, opts), 1e-6);
}

TEST(GradCheck, EveryTapedOp) {
  std::mt19937_64 rng(8);
  Tensor a = random_tensor(3, 4, rng), b = random_tensor(4, 4, rng), bias = random_tensor(1, 4, rng);
  Tensor g = random_tensor(1, 4, rng), beta = random_tensor(1, 4, rng), c = random_tensor(3, 4, rng);
  ScalarFn f = [&](Tape&, std::span<const Var> p) {
    Var h = add_row(matmul(p[0], p[1]), p[2]);
    h = layer_norm(h, p[3], p[4]);
    h = relu(add(h, scale(p[5], 0.5)));
    Var left = slice_cols(h, 0, 2), right = slice_cols(h, 2, 2);
    Var both[] = {right, left};
    Var cat = concat_cols(both);
    Var sm = softmax_rows(mul(cat, sub(p[5], p[0])));
    Var lsm = log_softmax_rows(matmul_nt(cat, p[0]));
    const std::vector<std::size_t> t{1, 0};
    const std::vector<std::size_t> rows{0, 2};
    return add(add(sum(mul(sm, sm)), scale(sum(lsm), 0.1)), cross_entropy(cat, t, rows));
  };
  GradCheckOptions opts;
  EXPECT_LE(grad_check(f, std::vector<Tensor>{a, b, bias, g, beta, c}, opts), 1e-6);
}

TEST(GradCheck, Attention) {
  std::mt19937_64 rng(9);
  const std::size_t d = 4;
  RawAttention raw = random_attention(d, rng);
  Tensor q = random_tensor(2, d, rng), kv = random_tensor(5, d, rng);
  ScalarFn f = [&](Tape&, std::span<const Var> p) {
    AttentionWeights w{p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9]};
    Var o = multi_head_attention(p[0], p[1], p[1], 2, w);
    return sum(mul(o, o));
  };
  std::vector<Tensor> params{q, kv, raw.wq, raw.bq, raw.wk, raw.bk, raw.wv, raw.bv, raw.wo, raw.bo};
  // the key bias shifts every score of a query equally, so its true gradient
  // is zero and only differencing roundoff remains; compare those absolutely
  GradCheckOptions opts;
  opts.floor = 1e-3;
  EXPECT_LE(grad_check(f, params, opts), 1e-6);
}

TEST(CrossEntropy, OmittedRowsMeanAllRows) {
  std::mt19937_64 rng(10);
  Tensor x = random_tensor(3, 4, rng);
  Tape tape;
  const std::vector<std::size_t> t{1, 0, 3}, all{0, 1, 2};
  EXPECT_DOUBLE_EQ(cross_entropy(tape.constant(x), t).value().item(),
                   cross_entropy(tape.constant(x), t, all).value().item());
  EXPECT_THROW(cross_entropy(tape.constant(x), std::vector<std::size_t>{1}), DimensionError);
}

TEST(CrossEntropy, MeanOverRows) {
  Tape tape;
  Var x = tape.constant(Tensor::from_rows({{0, 0}, {std::log(3.0), 0}}));
  const std::vector<std::size_t> t{0, 0};
  EXPECT_NEAR(cross_entropy(x, t).value().item(), 0.5 * (std::log(2.0) + std::log(4.0 / 3.0)), 1e-15);
}
