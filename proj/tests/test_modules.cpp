#include "m3att/decoder.hpp"
#include "m3att/grad_check.hpp"
#include "m3att/imi.hpp"
#include "m3att/language_encoder.hpp"
#include "m3att/lfr.hpp"
#include "m3att/mask_head.hpp"
#include "m3att/mutual_attention.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace m3att;

namespace {

Tensor rand_tensor(const Shape& shape, Rng& rng, bool grad = false) {
  return Tensor::from(shape, oracle::random(shape_numel(shape), rng), grad);
}

// Random pad pattern with at least one visible position per instance.
std::vector<bool> random_pad(std::size_t batch, std::size_t n, Rng& rng) {
  std::vector<bool> pad(batch * n, false);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t visible = 1 + rng.next() % n;
    for (std::size_t i = visible; i < n; ++i) pad[b * n + i] = true;
  }
  return pad;
}

Tensor mask_from(const std::vector<bool>& pad, std::size_t batch, std::size_t n) {
  std::vector<std::uint8_t> flags(pad.begin(), pad.end());
  return additive_key_mask(flags, batch, n);
}

oracle::Mat instance(const Tensor& t, std::size_t b) {
  const std::size_t per = t.numel() / t.dim(0);
  const auto v = t.to_vector();
  return {v.begin() + static_cast<long>(b * per), v.begin() + static_cast<long>((b + 1) * per)};
}

void expect_rows_normalized(const Tensor& w) {
  const std::size_t cols = w.shape().back();
  const auto v = w.to_vector();
  for (std::size_t r = 0; r < v.size() / cols; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += v[r * cols + j];
    ASSERT_NEAR(s, 1.0, 1e-9) << "row " << r;
  }
}

}  // namespace

// ---- multi-head attention ------------------------------------------------------

TEST(MultiHeadAttention, WeightsNormalizedAndMaskRespected) {
  Rng rng(1, "mha");
  MultiHeadAttention mha(8, 2, rng);
  Tensor q = rand_tensor({2, 3, 8}, rng);
  Tensor kv = rand_tensor({2, 4, 8}, rng);
  const auto pad = std::vector<bool>{false, false, true, true, false, true, true, true};
  const auto r = mha.forward(q, kv, kv, mask_from(pad, 2, 4));
  EXPECT_EQ(r.weights.shape(), (Shape{2, 2, 3, 4}));
  expect_rows_normalized(r.weights);
  const auto w = r.weights.to_vector();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 2 * 3; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        if (pad[b * 4 + j]) EXPECT_LT(w[(b * 6 + i) * 4 + j], 1e-300);
  EXPECT_THROW(mha.forward(q, kv, kv, Tensor::zeros({2, 3})), DimensionError);
}

TEST(MultiHeadAttention, SingleHeadMatchesOracle) {
  Rng rng(2, "mha1");
  MultiHeadAttention mha(4, 1, rng);
  Tensor q = rand_tensor({1, 3, 4}, rng);
  Tensor kv = rand_tensor({1, 5, 4}, rng);
  const auto out = mha.forward(q, kv, kv);
  const auto qp = oracle::apply(oracle::take(mha.query_proj()), q.to_vector(), 3);
  const auto kp = oracle::apply(oracle::take(mha.key_proj()), kv.to_vector(), 5);
  const auto vp = oracle::apply(oracle::take(mha.value_proj()), kv.to_vector(), 5);
  auto logits = oracle::matmul(qp, oracle::transpose(kp, 5, 4), 3, 4, 5);
  for (double& x : logits) x /= 2.0;
  const auto w = oracle::softmax_rows(logits, 3, 5);
  const auto ref = oracle::apply(oracle::take(mha.out_proj()), oracle::matmul(w, vp, 3, 5, 4), 3);
  EXPECT_LE(oracle::max_abs_diff(out.output.to_vector(), ref), 1e-12);
  EXPECT_LE(oracle::max_abs_diff(out.weights.to_vector(), w), 1e-12);
}

TEST(MultiHeadAttention, WidthMustDivideByHeads) {
  Rng rng(3, "mha-bad");
  EXPECT_THROW(MultiHeadAttention(6, 4, rng), DimensionError);
}

TEST(Positional, SinusoidalTable) {
  const auto t = sinusoidal_table(3, 4).to_vector();
  EXPECT_DOUBLE_EQ(t[0], 0.0);
  EXPECT_DOUBLE_EQ(t[1], 1.0);
  EXPECT_NEAR(t[4], std::sin(1.0), 1e-15);
  EXPECT_NEAR(t[5], std::cos(1.0), 1e-15);
  EXPECT_NEAR(t[6], std::sin(1.0 / 100.0), 1e-15);
  EXPECT_EQ(sinusoidal_table_2d(2, 3, 8).shape(), (Shape{6, 8}));
}

// ---- mutual attention ----------------------------------------------------------

TEST(MutualAttention, MatchesLoopOracleOnRandomInstances) {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(100 + trial, "m3att-oracle");
    const std::size_t n = 1 + rng.next() % 4, hw = 1 + rng.next() % 6, c = 2 + rng.next() % 7;
    const auto sharing =
        trial % 2 ? AttentionSharing::kIndependent : AttentionSharing::kShared;
    MutualAttention m(c, hw, sharing, rng);
    const std::size_t batch = 2;
    Tensor fq = rand_tensor({batch, n, c}, rng);
    Tensor fenc = rand_tensor({batch, hw, c}, rng);
    const auto pad = random_pad(batch, n, rng);
    const auto s = m.forward(fq, fenc, mask_from(pad, batch, n));
    for (std::size_t b = 0; b < batch; ++b) {
      const std::vector<bool> pb(pad.begin() + static_cast<long>(b * n),
                                 pad.begin() + static_cast<long>((b + 1) * n));
      const auto o = oracle::mutual_attention(m, instance(fq, b), instance(fenc, b), n, hw, c, pb);
      EXPECT_LE(oracle::max_abs_diff(instance(s.logits_lav, b), o.logits_lav), 1e-9);
      EXPECT_LE(oracle::max_abs_diff(instance(s.logits_val, b), o.logits_val), 1e-9);
      EXPECT_LE(oracle::max_abs_diff(instance(s.weights_lav, b), o.weights_lav), 1e-9);
      EXPECT_LE(oracle::max_abs_diff(instance(s.weights_val, b), o.weights_val), 1e-9);
      EXPECT_LE(oracle::max_abs_diff(instance(s.fused, b), o.fused), 1e-9);
      EXPECT_LE(oracle::max_abs_diff(instance(s.output, b), o.output), 1e-9);
    }
  }
}

TEST(MutualAttention, TinyExampleByHand) {
  // One word, two pixels, C=1 with identity projections.
  Rng rng(5, "m3att-hand");
  MutualAttention m(1, 2, AttentionSharing::kShared, rng);
  for (Linear* l : {&m.lang_key(), &m.lang_value(), &m.vis_key(), &m.vis_value()}) {
    l->weight().mutable_data()[0] = 1.0;
    l->bias().mutable_data()[0] = 0.0;
  }
  Tensor fq = Tensor::from({1, 1, 1}, {1.0});
  Tensor fenc = Tensor::from({1, 2, 1}, {std::log(2.0), 0.0});
  const auto s = m.forward(fq, fenc);
  // softmax over pixels of [ln 2, 0] = [2/3, 1/3]; a single word takes all VAL weight.
  EXPECT_NEAR(s.weights_lav.data()[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.weights_lav.data()[1], 1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(s.weights_val.data()[0], 1.0);
  EXPECT_DOUBLE_EQ(s.weights_val.data()[1], 1.0);
  EXPECT_NEAR(s.lav.data()[0], 2.0 / 3.0 * std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(s.val.data()[0], 1.0);
  EXPECT_NEAR(s.fused.data()[1], 2.0 / 3.0 * std::log(2.0), 1e-15);
}

TEST(MutualAttention, SharedModeUsesOneLogitsTensor) {
  Rng rng(6, "m3att-shared");
  MutualAttention shared(4, 3, AttentionSharing::kShared, rng);
  MutualAttention indep(4, 3, AttentionSharing::kIndependent, rng);
  Tensor fq = rand_tensor({1, 2, 4}, rng), fenc = rand_tensor({1, 3, 4}, rng);
  const auto s = shared.forward(fq, fenc);
  EXPECT_EQ(s.logits_lav.id(), s.logits_val.id());
  const auto t = indep.forward(fq, fenc);
  EXPECT_NE(t.logits_lav.id(), t.logits_val.id());
  EXPECT_NE(t.logits_lav.to_vector(), t.logits_val.to_vector());
}

TEST(MutualAttention, BothAxesNormalizedAndPadsHidden) {
  Rng rng(7, "m3att-norm");
  for (int trial = 0; trial < 10; ++trial) {
    MutualAttention m(6, 5, AttentionSharing::kShared, rng);
    Tensor fq = rand_tensor({3, 4, 6}, rng), fenc = rand_tensor({3, 5, 6}, rng);
    const auto pad = random_pad(3, 4, rng);
    const auto s = m.forward(fq, fenc, mask_from(pad, 3, 4));
    expect_rows_normalized(s.weights_lav);
    expect_rows_normalized(s.weights_val);
    const auto w = s.weights_val.to_vector();
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t p = 0; p < 5; ++p)
        for (std::size_t i = 0; i < 4; ++i)
          if (pad[b * 4 + i]) EXPECT_LT(w[(b * 5 + p) * 4 + i], 1e-300);
  }
}

TEST(MutualAttention, SingleWordAndSinglePixel) {
  Rng rng(8, "m3att-edge");
  MutualAttention m(4, 1, AttentionSharing::kShared, rng);
  const auto s = m.forward(rand_tensor({1, 1, 4}, rng), rand_tensor({1, 1, 4}, rng));
  EXPECT_DOUBLE_EQ(s.weights_lav.item(), 1.0);
  EXPECT_DOUBLE_EQ(s.weights_val.item(), 1.0);
}

TEST(MutualAttention, WidthMismatchThrows) {
  Rng rng(9, "m3att-bad");
  MutualAttention m(4, 3, AttentionSharing::kShared, rng);
  EXPECT_THROW(m.forward(rand_tensor({1, 2, 4}, rng), rand_tensor({1, 3, 5}, rng)),
               DimensionError);
  // A vision length other than the configured HW is a configuration error.
  EXPECT_THROW(m.forward(rand_tensor({1, 2, 4}, rng), rand_tensor({1, 2, 4}, rng)), ConfigError);
}

TEST(MutualAttention, GradientsMatchFiniteDifferences) {
  for (auto sharing : {AttentionSharing::kShared, AttentionSharing::kIndependent}) {
    Rng rng(10, "m3att-grad");
    MutualAttention m(4, 3, sharing, rng);
    ParamRegistry reg;
    m.register_into("m", reg);
    Tensor fq = rand_tensor({2, 3, 4}, rng, true), fenc = rand_tensor({2, 3, 4}, rng, true);
    Tensor w = rand_tensor({2, 3, 4}, rng);
    Tensor mask = mask_from({false, false, true, false, false, false}, 2, 3);
    std::vector<NamedParam> params{{"fq", fq}, {"fenc", fenc}};
    for (const auto& p : reg.params()) params.push_back({p.name, p.tensor});
    GradCheckOptions opts;
    const auto r = grad_check([&] { return sum(mul(m.forward(fq, fenc, mask).output, w)); },
                              params, opts);
    EXPECT_TRUE(r.passed) << r.max_rel_error;
  }
}

// ---- decoder -------------------------------------------------------------------

namespace {

struct DecoderFixture {
  std::size_t c = 8, heads = 2, n = 4, g = 2;
  Rng rng{20, "decoder"};
  Tensor words, enc, mask;
  DecoderFixture() {
    words = rand_tensor({2, n, c}, rng, true);
    enc = rand_tensor({2, g * g, c}, rng, true);
    mask = mask_from({false, false, false, true, false, false, true, true}, 2, n);
  }
};

}  // namespace

TEST(Decoder, LayerPreservesShapeAndNormalizesWeights) {
  DecoderFixture f;
  for (auto kind : {FusionKind::kMutual, FusionKind::kGenericLav, FusionKind::kGenericVal}) {
    DecoderLayer layer(f.c, f.heads, f.g * f.g, kind, AttentionSharing::kShared,
                       NormPlacement::kPost, f.rng);
    const auto out = layer.forward(f.words, f.enc, f.mask);
    EXPECT_EQ(out.output.shape(), f.words.shape());
    expect_rows_normalized(out.self_weights);
    expect_rows_normalized(out.cross_weights);
    if (kind != FusionKind::kMutual) expect_rows_normalized(out.generic_weights);
  }
}

TEST(Decoder, ZeroWeightsFallThroughToNormalizedQuery) {
  DecoderFixture f;
  DecoderLayer layer(f.c, f.heads, f.g * f.g, FusionKind::kMutual, AttentionSharing::kShared,
                     NormPlacement::kPost, f.rng);
  ParamRegistry reg;
  layer.register_into("l", reg);
  for (const auto& p : reg.params())
    if (p.name.find("norm") == std::string::npos) {
      Tensor t = p.tensor;
      fill_zero(t);
    }
  const auto out = layer.forward(f.words, f.enc, f.mask);
  LayerNorm ln(f.c);
  // Three zeroed sub-blocks add nothing; repeated unit normalization is idempotent.
  const auto ref = ln.forward(ln.forward(ln.forward(f.words))).to_vector();
  EXPECT_LE(oracle::max_abs_diff(out.output.to_vector(), ref), 1e-9);
}

TEST(Decoder, CrossAttentionReadsTheFusedFeature) {
  DecoderFixture f;
  DecoderLayer layer(f.c, f.heads, f.g * f.g, FusionKind::kMutual, AttentionSharing::kShared,
                     NormPlacement::kPost, f.rng);
  const auto out = layer.forward(f.words, f.enc, f.mask);
  const auto ca = layer.cross_attn().forward(out.query, out.fused, out.fused, f.mask);
  LayerNorm ln = layer.norm_cross();
  const auto ref = ln.forward(add(out.query, ca.output));
  EXPECT_EQ(out.output.to_vector(), ref.to_vector());
}

TEST(Decoder, StackOfOneEqualsLayer) {
  DecoderFixture f;
  Rng a(5, "stack"), b(5, "stack");
  DecoderStack stack(f.c, f.heads, f.g * f.g, 1, FusionKind::kMutual, AttentionSharing::kShared,
                     NormPlacement::kPost, a);
  DecoderLayer layer(f.c, f.heads, f.g * f.g, FusionKind::kMutual, AttentionSharing::kShared,
                     NormPlacement::kPost, b);
  EXPECT_EQ(stack.forward(f.words, f.enc, f.mask, nullptr, true).output.to_vector(),
            layer.forward(f.words, f.enc, f.mask).output.to_vector());
}

TEST(Decoder, WordsFeedOnlyTheFirstLayerWithoutImi) {
  DecoderFixture f;
  DecoderStack stack(f.c, f.heads, f.g * f.g, 3, FusionKind::kMutual, AttentionSharing::kShared,
                     NormPlacement::kPost, f.rng);
  const auto out = stack.forward(f.words, f.enc, f.mask, nullptr, true);
  std::size_t consumers = 0;
  std::string scope;
  for (const auto& t : topological_order(out.output))
    for (const auto& p : t.parents())
      if (p.id() == f.words.id()) {
        ++consumers;
        scope = t.scope();
      }
  EXPECT_GE(consumers, 1u);
  EXPECT_EQ(scope.rfind("layer0", 0), 0u) << scope;
  for (const auto& t : topological_order(out.output))
    for (const auto& p : t.parents())
      if (p.id() == f.words.id()) EXPECT_EQ(t.scope().rfind("layer0", 0), 0u) << t.scope();
}

TEST(Decoder, GradientsMatchFiniteDifferences) {
  DecoderFixture f;
  for (auto norm : {NormPlacement::kPost, NormPlacement::kPre}) {
    DecoderStack stack(f.c, f.heads, f.g * f.g, 2, FusionKind::kMutual,
                       AttentionSharing::kShared, norm, f.rng);
    ImiChain chain(f.c, 2, ImiMode::kFull, f.rng);
    ParamRegistry reg;
    stack.register_into("d", reg);
    chain.register_into("i", reg);
    Tensor w = rand_tensor({2, f.n, f.c}, f.rng);
    std::vector<NamedParam> params{{"words", f.words}, {"enc", f.enc}};
    for (const auto& p : reg.params()) params.push_back({p.name, p.tensor});
    Tensor gate = chain.block(0).gate();
    gate.mutable_data()[0] = 0.7;
    GradCheckOptions opts;
    opts.max_entries_per_tensor = 8;
    const auto r = grad_check(
        [&] { return sum(mul(stack.forward(f.words, f.enc, f.mask, &chain, true).output, w)); },
        params, opts);
    EXPECT_TRUE(r.passed) << r.max_rel_error;
  }
}

TEST(Encoder, AddsPositionsAndKeepsShape) {
  Rng rng(21, "encoder");
  EncoderStack enc(8, 2, 2, 2, 3, rng);
  EXPECT_EQ(enc.spatial(), 6u);
  Tensor x = rand_tensor({2, 6, 8}, rng);
  EXPECT_EQ(enc.forward(x, true).shape(), x.shape());
  EXPECT_THROW(enc.forward(rand_tensor({2, 5, 8}, rng), true), DimensionError);
}

// ---- IMI -------------------------------------------------------------------------

TEST(Imi, BlockMatchesOracleOnRandomInstances) {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(200 + trial, "imi-oracle");
    const std::size_t n = 1 + rng.next() % 4, c = 2 + rng.next() % 7, batch = 3;
    ImiBlock blk(c, rng);
    blk.gate().mutable_data()[0] = rng.uniform(-1.0, 1.0);
    const bool star = trial % 4 == 3;
    Tensor dec = rand_tensor({batch, n, c}, rng);
    Tensor prev = rand_tensor({batch, n, c}, rng);
    Tensor words = rand_tensor({batch, n, c}, rng);
    const auto pad = random_pad(batch, n, rng);
    const auto s = blk.forward(dec, prev, words, star ? ImiMode::kStar : ImiMode::kFull,
                               mask_from(pad, batch, n), true);
    const auto o = oracle::imi_block(blk, dec.to_vector(), prev.to_vector(), words.to_vector(),
                                     batch, n, c, star, pad);
    EXPECT_LE(oracle::max_abs_diff(s.output.to_vector(), o.output), 1e-9);
    EXPECT_LE(oracle::max_abs_diff(s.language.to_vector(), o.language), 1e-9);
    if (!star) {
      EXPECT_LE(oracle::max_abs_diff(s.attention.to_vector(), o.attention), 1e-9);
      expect_rows_normalized(s.attention);
    }
  }
}

TEST(Imi, GateStartsAtZeroAndOffIsIdentity) {
  Rng rng(22, "imi-init");
  ImiChain chain(8, 3, ImiMode::kFull, rng);
  EXPECT_EQ(chain.size(), 2u);
  for (std::size_t i = 0; i < chain.size(); ++i) EXPECT_EQ(chain.block(i).gate().item(), 0.0);
  Tensor dec = rand_tensor({2, 3, 8}, rng);
  const auto s = chain.block(0).forward(dec, dec, dec, ImiMode::kOff, Tensor{}, true);
  EXPECT_EQ(s.output.id(), dec.id());
  EXPECT_EQ(ImiChain(8, 1, ImiMode::kFull, rng).size(), 0u);
}

TEST(Imi, OffChainMatchesPlainStack) {
  DecoderFixture f;
  Rng a(9, "plain"), b(9, "plain");
  DecoderStack s1(f.c, f.heads, f.g * f.g, 3, FusionKind::kMutual, AttentionSharing::kShared,
                  NormPlacement::kPost, a);
  DecoderStack s2(f.c, f.heads, f.g * f.g, 3, FusionKind::kMutual, AttentionSharing::kShared,
                  NormPlacement::kPost, b);
  ImiChain off(f.c, 3, ImiMode::kOff, f.rng);
  EXPECT_EQ(s1.forward(f.words, f.enc, f.mask, &off, true).output.to_vector(),
            s2.forward(f.words, f.enc, f.mask, nullptr, true).output.to_vector());
}

TEST(Imi, ModeNamesRoundTrip) {
  for (auto m : {ImiMode::kFull, ImiMode::kStar, ImiMode::kOff})
    EXPECT_EQ(parse_imi_mode(to_string(m)), m);
  EXPECT_THROW(parse_imi_mode("sometimes"), ConfigError);
}

TEST(Imi, GradientsIncludeGate) {
  Rng rng(23, "imi-grad");
  ImiBlock blk(4, rng);
  blk.gate().mutable_data()[0] = 0.3;
  ParamRegistry reg;
  blk.register_into("b", reg);
  Tensor dec = rand_tensor({2, 3, 4}, rng, true), prev = rand_tensor({2, 3, 4}, rng, true);
  Tensor w = rand_tensor({2, 3, 4}, rng);
  std::vector<NamedParam> params{{"dec", dec}, {"prev", prev}};
  for (const auto& p : reg.params()) params.push_back({p.name, p.tensor});
  GradCheckOptions opts;
  const auto r = grad_check(
      [&] { return sum(mul(blk.forward(dec, prev, prev, ImiMode::kFull, Tensor{}, true).output, w)); },
      params, opts);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

// ---- LFR -------------------------------------------------------------------------

TEST(Lfr, TargetAndReconstructionMatchOracle) {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(300 + trial, "lfr-oracle");
    const std::size_t n = 1 + rng.next() % 4, c = 2 + rng.next() % 7, batch = 2;
    const bool strict = trial % 2 == 1;
    LfrHead head(c, n, {.batch_norm = true, .strict_relu = strict}, rng);
    Tensor words = rand_tensor({batch, n, c}, rng);
    Tensor sentence = rand_tensor({batch, 1, c}, rng);
    Tensor dec = rand_tensor({batch, n, c}, rng);
    const auto target = head.project_target(words, sentence);
    ASSERT_EQ(target.shape(), (Shape{batch, 1, c}));
    for (std::size_t b = 0; b < batch; ++b) {
      const auto ref = oracle::lfr_target(instance(words, b), instance(sentence, b),
                                          oracle::values(head.projection()),
                                          oracle::values(head.positional()), n, c);
      EXPECT_LE(oracle::max_abs_diff(instance(target, b), ref), 1e-9);
    }
    const auto recon = head.reconstruct(dec, true);
    const auto ref = oracle::lfr_reconstruct(head, dec.to_vector(), batch, n, c, true, strict);
    EXPECT_LE(oracle::max_abs_diff(recon.to_vector(), ref), 1e-9);
  }
}

TEST(Lfr, TargetIsNonnegativeAndLossIsMse) {
  Rng rng(24, "lfr-prop");
  LfrHead head(6, 4, {}, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const auto t = head.project_target(rand_tensor({2, 4, 6}, rng), rand_tensor({2, 1, 6}, rng));
    for (double v : t.to_vector()) EXPECT_GE(v, 0.0);
  }
  Tensor a = Tensor::from({1, 1, 2}, {1.0, 3.0}), b = Tensor::from({1, 1, 2}, {0.0, 1.0});
  EXPECT_DOUBLE_EQ(lfr_loss(a, b).item(), 2.5);
  EXPECT_DOUBLE_EQ(lfr_loss(a, a).item(), 0.0);
  EXPECT_THROW(lfr_loss(a, Tensor::zeros({1, 1, 3})), DimensionError);
}

TEST(Lfr, GradientsReachBothPaths) {
  Rng rng(25, "lfr-grad");
  LfrHead head(4, 3, {}, rng);
  ParamRegistry reg;
  head.register_into("lfr", reg);
  Tensor words = rand_tensor({2, 3, 4}, rng, true), sentence = rand_tensor({2, 1, 4}, rng, true);
  Tensor dec = rand_tensor({2, 3, 4}, rng, true);
  std::vector<NamedParam> params{{"words", words}, {"sentence", sentence}, {"dec", dec}};
  for (const auto& p : reg.params()) params.push_back({p.name, p.tensor});
  GradCheckOptions opts;
  const auto r = grad_check(
      [&] { return lfr_loss(head.reconstruct(dec, true), head.project_target(words, sentence)); },
      params, opts);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

// ---- mask head -------------------------------------------------------------------

TEST(MaskHead, DynamicMapsMatchOracle) {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(400 + trial, "dyn-oracle");
    const std::size_t n = 1 + rng.next() % 4, c = 2 + rng.next() % 7;
    const std::size_t h = 1 + rng.next() % 2, w = 1 + rng.next() % 3;
    Tensor rows = rand_tensor({2, n, c}, rng), enc = rand_tensor({2, c, h, w}, rng);
    const auto maps = dynamic_conv_maps(rows, enc);
    ASSERT_EQ(maps.shape(), (Shape{2, n, h, w}));
    for (std::size_t b = 0; b < 2; ++b) {
      const auto ref = oracle::dynamic_maps(instance(rows, b), instance(enc, b), n, c, h * w);
      EXPECT_LE(oracle::max_abs_diff(instance(maps, b), ref), 1e-9);
    }
  }
  EXPECT_THROW(dynamic_conv_maps(Tensor::zeros({1, 2, 3}), Tensor::zeros({1, 4, 2, 2})),
               DimensionError);
}

TEST(MaskHead, OutputIsProbabilityMapAtFullResolution) {
  Rng rng(26, "mask-head");
  MaskHead head(8, 3, 4, 2, rng);
  Tensor dec = rand_tensor({2, 3, 8}, rng), enc = rand_tensor({2, 8, 2, 2}, rng);
  const auto out = head.forward(dec, enc, Tensor{}, true);
  EXPECT_EQ(out.mask.shape(), (Shape{2, 1, 8, 8}));
  for (double v : out.mask.to_vector()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_THROW(MaskHead(8, 3, 1, 2, rng), ConfigError);
}

TEST(MaskHead, BothInputsInfluenceTheMask) {
  Rng rng(27, "mask-both");
  MaskHead head(8, 3, 4, 2, rng);
  Tensor dec = rand_tensor({2, 3, 8}, rng), enc = rand_tensor({2, 8, 2, 2}, rng);
  const auto base = head.forward(dec, enc, Tensor{}, false).mask.to_vector();
  EXPECT_NE(head.forward(Tensor::zeros(dec.shape()), enc, Tensor{}, false).mask.to_vector(), base);
  EXPECT_NE(head.forward(dec, Tensor::zeros(enc.shape()), Tensor{}, false).mask.to_vector(), base);
}

TEST(MaskHead, GradientsMatchFiniteDifferences) {
  Rng rng(28, "mask-grad");
  MaskHead head(4, 2, 2, 2, rng);
  ParamRegistry reg;
  head.register_into("mh", reg);
  Tensor dec = rand_tensor({2, 2, 4}, rng, true), enc = rand_tensor({2, 4, 2, 2}, rng, true);
  Tensor target = Tensor::from({2, 1, 8, 8}, oracle::random(128, rng));
  for (double& v : target.mutable_data()) v = v > 0 ? 1.0 : 0.0;
  std::vector<NamedParam> params{{"dec", dec}, {"enc", enc}};
  for (const auto& p : reg.params()) params.push_back({p.name, p.tensor});
  GradCheckOptions opts;
  opts.max_entries_per_tensor = 8;
  const auto r = grad_check(
      [&] { return bce_loss(head.forward(dec, enc, Tensor{}, true).mask, target); }, params, opts);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

// ---- language encoder ------------------------------------------------------------

TEST(LanguageEncoder, ShapesPadsAndVocabularyBounds) {
  Rng rng(29, "lang");
  LanguageEncoder enc(10, 8, 0, rng);
  TokenBatch tb{2, 4, {3, 4, 0, 0, 5, 6, 7, 0}};
  const auto f = enc.forward(tb, true);
  EXPECT_EQ(f.words.shape(), (Shape{2, 4, 8}));
  EXPECT_EQ(f.sentence.shape(), (Shape{2, 1, 8}));
  EXPECT_EQ(f.pad, (std::vector<std::uint8_t>{0, 0, 1, 1, 0, 0, 0, 1}));
  EXPECT_THROW(enc.forward(TokenBatch{1, 2, {1, 10}}, true), VocabularyError);
  EXPECT_THROW(enc.forward(TokenBatch{1, 2, {1}}, true), DimensionError);
}

TEST(LanguageEncoder, PaddingDoesNotChangeVisibleWords) {
  Rng rng(30, "lang-pad");
  LanguageEncoder enc(10, 8, 0, rng);
  const auto a = enc.forward(TokenBatch{1, 3, {3, 4, 0}}, false);
  const auto b = enc.forward(TokenBatch{1, 5, {3, 4, 0, 0, 0}}, false);
  const auto av = a.words.to_vector(), bv = b.words.to_vector();
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(av[i], bv[i], 1e-12);
  EXPECT_LE(oracle::max_abs_diff(a.sentence.to_vector(), b.sentence.to_vector()), 1e-12);
}
