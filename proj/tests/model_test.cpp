#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "narasr/errors.hpp"
#include "narasr/model.hpp"
#include "oracles.hpp"

using namespace narasr;
using oracle::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.input_dim = 4;
  c.model_dim = 8;
  c.heads = 2;
  c.ffn_dim = 16;
  c.encoder_layers = 2;
  c.lm_layers = 2;
  c.vocab_size = 6;
  c.alpha = 0.3;
  return c;
}

ModelParams small_params(std::uint64_t seed = 5) { return ModelParams::initialize(small_config(), seed); }

void expect_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

}  // namespace

TEST(ModelParams, ShapesFollowConfig) {
  auto p = small_params();
  EXPECT_EQ(p.at("lm.embed").shape(), (std::array<std::size_t, 2>{6, 8}));
  EXPECT_EQ(p.at("mcm.w").shape(), (std::array<std::size_t, 2>{8, 6}));
  EXPECT_EQ(p.at("ctc.w").shape(), (std::array<std::size_t, 2>{8, 6}));
  EXPECT_EQ(p.at("out.b").shape(), (std::array<std::size_t, 2>{1, 6}));
  EXPECT_EQ(p.at("enc.in.w").shape(), (std::array<std::size_t, 2>{4, 8}));
  EXPECT_THROW(p.at("no.such.tensor"), ArgumentError);
}

TEST(ModelParams, InvalidConfigRejected) {
  ModelConfig c = small_config();
  c.heads = 3;
  EXPECT_THROW(ModelParams{c}, ConfigError);
  c = small_config();
  c.vocab_size = 3;
  EXPECT_THROW(ModelParams{c}, ConfigError);
}

TEST(ModelParams, SeededInitIsReproducible) {
  EXPECT_TRUE(small_params(9) == small_params(9));
  EXPECT_FALSE(small_params(9) == small_params(10));
}

TEST(Encode, SingleFrameShape) {
  auto p = small_params();
  std::mt19937_64 rng(1);
  EXPECT_EQ(encode(random_tensor(1, 4, rng), p).shape(), (std::array<std::size_t, 2>{1, 8}));
}

TEST(Encode, ZeroWeightsGiveZeroMeanRows) {
  ModelParams p(small_config());
  for (auto& nt : p.tensors())
    if (nt.name.ends_with(".g")) nt.value.fill(1.0);
  Tensor h = encode(Tensor(6, 4), p);
  ASSERT_TRUE(h.all_finite());
  for (std::size_t r = 0; r < h.rows(); ++r) {
    double mean = 0.0;
    for (double v : h.row(r)) mean += v / 8.0;
    EXPECT_NEAR(mean, 0.0, 1e-12);
  }
}

TEST(Encode, EmptyInputRejected) {
  EXPECT_THROW(encode(Tensor(0, 4), small_params()), ArgumentError);
  EXPECT_THROW(encode(Tensor(3, 5), small_params()), DimensionError);
}

TEST(Encode, ReplayIsBitIdentical) {
  std::mt19937_64 rng(2);
  Tensor x = random_tensor(9, 4, rng);
  EXPECT_EQ(encode(x, small_params(3)), encode(x, small_params(3)));
}

TEST(CtcBranch, ZeroWeightsGiveUniformPosterior) {
  ModelParams p(small_config());
  std::mt19937_64 rng(3);
  Tensor logits = ctc_branch(random_tensor(5, 8, rng), p);
  EXPECT_EQ(logits, Tensor(5, 6));
  Tensor post = softmax_rows(logits);
  for (double v : post.values()) EXPECT_NEAR(v, 1.0 / 6.0, 1e-15);
}

TEST(CtcBranch, AffineOracle) {
  auto p = small_params();
  std::mt19937_64 rng(4);
  for (std::size_t T : {1u, 3u, 11u}) {
    Tensor h = random_tensor(T, 8, rng);
    Tensor got = ctc_branch(h, p);
    EXPECT_EQ(got.shape(), (std::array<std::size_t, 2>{T, 6}));
    expect_near(got, oracle::affine(h, p.at("ctc.w"), p.at("ctc.b")), 1e-12);
  }
}

TEST(PositionalEmbedding, PositionZero) {
  Tensor pe = positional_embedding(3, 8);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(pe(0, c), c % 2 == 0 ? 0.0 : 1.0);
}

TEST(PositionalEmbedding, RowsDistinct) {
  Tensor pe = positional_embedding(10000, 64);
  std::set<std::vector<double>> rows;
  for (std::size_t r = 0; r < pe.rows(); ++r) rows.emplace(pe.row(r).begin(), pe.row(r).end());
  EXPECT_EQ(rows.size(), 10000u);
}

TEST(PositionalEmbedding, FormulaTable) {
  Tensor pe = positional_embedding(5, 8);
  for (std::size_t pos = 0; pos < 5; ++pos)
    for (std::size_t i = 0; i < 4; ++i) {
      const double angle = pos / std::exp(std::log(10000.0) * (2.0 * i) / 8.0);
      EXPECT_NEAR(pe(pos, 2 * i), std::sin(angle), 1e-12);
      EXPECT_NEAR(pe(pos, 2 * i + 1), std::cos(angle), 1e-12);
    }
}

TEST(PositionalEmbedding, ZeroLengthRejected) {
  EXPECT_THROW(positional_embedding(0, 8), ArgumentError);
}

TEST(ConvertLength, SingleFrameGivesIdenticalRows) {
  auto p = small_params();
  std::mt19937_64 rng(5);
  Tensor h = convert_length(random_tensor(1, 8, rng), 4, p);
  for (std::size_t r = 1; r < 4; ++r)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(h(r, c), h(0, c), 1e-12);
}

TEST(ConvertLength, SingleTarget) {
  auto p = small_params();
  std::mt19937_64 rng(6);
  EXPECT_EQ(convert_length(random_tensor(7, 8, rng), 1, p).shape(), (std::array<std::size_t, 2>{1, 8}));
}

TEST(ConvertLength, AttentionOracle) {
  auto p = small_params();
  std::mt19937_64 rng(7);
  Tensor hac = random_tensor(9, 8, rng);
  Tensor want = oracle::attention(positional_embedding(4, 8), hac, hac, 2, oracle::attention_from(p, "mcm.attn"));
  expect_near(convert_length(hac, 4, p), want, 1e-10);
}

TEST(PreliminaryLogits, ZeroProjection) {
  auto p = small_params();
  p.at("mcm.w").fill(0.0);
  std::mt19937_64 rng(8);
  EXPECT_EQ(preliminary_logits(random_tensor(3, 8, rng), p), Tensor(3, 6));
}

TEST(PreliminaryLogits, OneHotRowsSelectProjectionRows) {
  auto p = small_params();
  Tensor h(3, 8);
  const std::size_t pick[] = {5, 0, 2};
  for (std::size_t r = 0; r < 3; ++r) h(r, pick[r]) = 1.0;
  Tensor la = preliminary_logits(h, p);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(la(r, c), p.at("mcm.w")(pick[r], c));
}

TEST(PreliminaryLogits, MatmulOracle) {
  auto p = small_params();
  std::mt19937_64 rng(9);
  Tensor h = random_tensor(5, 8, rng);
  expect_near(preliminary_logits(h, p), oracle::matmul(h, p.at("mcm.w")), 1e-12);
}

TEST(ModalityConvert, PeakedRowSelectsEmbedding) {
  auto p = small_params();
  Tensor la(2, 6);
  la(0, 3) = 1e4;
  la(1, 1) = 1e4;
  auto conv = modality_convert(la, p.at("lm.embed"));
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_NEAR(conv.H_LM(0, c), p.at("lm.embed")(3, c), 1e-6);
    EXPECT_NEAR(conv.H_LM(1, c), p.at("lm.embed")(1, c), 1e-6);
  }
}

TEST(ModalityConvert, ZeroLogitsAverageEmbeddings) {
  auto p = small_params();
  const Tensor& m = p.at("lm.embed");
  auto conv = modality_convert(Tensor(3, 6), m);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 8; ++c) {
      double mean = 0.0;
      for (std::size_t v = 0; v < 6; ++v) mean += m(v, c) / 6.0;
      EXPECT_NEAR(conv.H_LM(r, c), mean, 1e-12);
    }
}

TEST(ModalityConvert, SoftmaxThenMatmulOracle) {
  auto p = small_params();
  std::mt19937_64 rng(10);
  Tensor la = random_tensor(4, 6, rng, 5.0);
  auto conv = modality_convert(la, p.at("lm.embed"));
  Tensor wa = oracle::softmax(la);
  expect_near(conv.W_a, wa, 1e-12);
  expect_near(conv.H_LM, oracle::matmul(wa, p.at("lm.embed")), 1e-12);
}

TEST(ModalityConvert, EmbeddingRowCountMustMatch) {
  EXPECT_THROW(modality_convert(Tensor(2, 6), Tensor(5, 8)), DimensionError);
}

TEST(LmEncode, SingleRow) {
  auto p = small_params();
  std::mt19937_64 rng(11);
  EXPECT_EQ(lm_encode(random_tensor(1, 8, rng), p).shape(), (std::array<std::size_t, 2>{1, 6}));
}

TEST(LmEncode, ZeroHeadGivesBias) {
  auto p = small_params();
  p.at("out.w").fill(0.0);
  std::mt19937_64 rng(12);
  p.at("out.b") = random_tensor(1, 6, rng);
  Tensor ll = lm_encode(random_tensor(4, 8, rng), p);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(ll(r, c), p.at("out.b")(0, c));
}

TEST(LmEncode, ReplayIsBitIdentical) {
  std::mt19937_64 rng(13);
  Tensor h = random_tensor(5, 8, rng);
  EXPECT_EQ(lm_encode(h, small_params(4)), lm_encode(h, small_params(4)));
}

TEST(FuseLogits, AlphaZeroIsAcousticOnly) {
  std::mt19937_64 rng(14);
  Tensor ll = random_tensor(3, 6, rng), la = random_tensor(3, 6, rng);
  EXPECT_EQ(fuse_logits(ll, la, 0.0), la);
}

TEST(FuseLogits, DefaultWeight) {
  std::mt19937_64 rng(15);
  Tensor ll = random_tensor(3, 6, rng), la = random_tensor(3, 6, rng);
  Tensor lf = fuse_logits(ll, la, 0.3);
  for (std::size_t i = 0; i < lf.size(); ++i) EXPECT_DOUBLE_EQ(lf[i], 0.3 * ll[i] + la[i]);
}

TEST(FuseLogits, AlphaOneWithZeroAcoustic) {
  std::mt19937_64 rng(16);
  Tensor ll = random_tensor(3, 6, rng);
  EXPECT_EQ(fuse_logits(ll, Tensor(3, 6), 1.0), ll);
  EXPECT_THROW(fuse_logits(ll, Tensor(2, 6), 1.0), DimensionError);
}

TEST(ForwardNar, Shapes) {
  auto p = small_params();
  std::mt19937_64 rng(17);
  auto tr = forward_nar(random_tensor(7, 4, rng), 3, p);
  EXPECT_EQ(tr.frame_logits.shape(), (std::array<std::size_t, 2>{7, 6}));
  EXPECT_EQ(tr.L_f.shape(), (std::array<std::size_t, 2>{3, 6}));
  EXPECT_EQ(tr.H_LM.shape(), (std::array<std::size_t, 2>{3, 8}));
  EXPECT_THROW(forward_nar(random_tensor(7, 4, rng), 0, p), ArgumentError);
}

TEST(ForwardNar, AlphaZeroFollowsPreliminaryArgmax) {
  ModelConfig c = small_config();
  c.alpha = 0.0;
  auto p = ModelParams::initialize(c, 6);
  std::mt19937_64 rng(18);
  auto tr = forward_nar(random_tensor(8, 4, rng), 4, p);
  for (std::size_t r = 0; r < 4; ++r) EXPECT_EQ(argmax(tr.L_f.row(r)), argmax(tr.L_a.row(r)));
}

TEST(ForwardNar, EqualsSequentialComposition) {
  auto p = small_params();
  std::mt19937_64 rng(19);
  Tensor x = random_tensor(6, 4, rng);
  auto tr = forward_nar(x, 3, p);
  Tensor hac = encode(x, p);
  Tensor h = convert_length(hac, 3, p);
  Tensor la = preliminary_logits(h, p);
  auto conv = modality_convert(la, p.at("lm.embed"));
  Tensor ll = lm_encode(conv.H_LM, p);
  expect_near(tr.H_AC, hac, 1e-12);
  expect_near(tr.frame_logits, ctc_branch(hac, p), 1e-12);
  expect_near(tr.H_PE, positional_embedding(3, 8), 0.0);
  expect_near(tr.H, h, 1e-12);
  expect_near(tr.L_a, la, 1e-12);
  expect_near(tr.W_a, conv.W_a, 1e-12);
  expect_near(tr.H_LM, conv.H_LM, 1e-12);
  expect_near(tr.L_l, ll, 1e-12);
  expect_near(tr.L_f, fuse_logits(ll, la, 0.3), 1e-12);
}

TEST(ForwardNar, LengthContractAndSimplex) {
  auto p = small_params();
  std::mt19937_64 rng(20);
  for (std::size_t T = 1; T <= 50; T += 7) {
    Tensor x = random_tensor(T, 4, rng);
    for (std::size_t L = 1; L <= 20; ++L) {
      auto tr = forward_nar(x, L, p);
      ASSERT_EQ(tr.L_f.rows(), L);
      for (std::size_t r = 0; r < L; ++r) {
        double s = 0.0;
        for (double w : tr.W_a.row(r)) {
          EXPECT_GE(w, 0.0);
          s += w;
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
    }
  }
}

TEST(ForwardNar, ReplayIsBitIdentical) {
  std::mt19937_64 rng(21);
  Tensor x = random_tensor(10, 4, rng);
  auto a = forward_nar(x, 4, small_params(8));
  auto b = forward_nar(x, 4, small_params(8));
  EXPECT_EQ(a.H_AC, b.H_AC);
  EXPECT_EQ(a.L_f, b.L_f);
  EXPECT_EQ(a.W_a, b.W_a);
}

TEST(ForwardNar, TapedAndUntapedAgree) {
  auto p = small_params();
  std::mt19937_64 rng(22);
  Tensor x = random_tensor(6, 4, rng);
  ad::Tape tape(true);
  graph::BoundParams bound(tape, p, true);
  auto tr = graph::to_trace(graph::forward_nar(bound, x, 2));
  EXPECT_EQ(tr.L_f, forward_nar(x, 2, p).L_f);
}
