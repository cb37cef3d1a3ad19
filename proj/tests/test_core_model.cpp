#include "reference_model.hpp"
#include "test_support.hpp"

#include <set>
#include <thread>

using namespace circuit_lens;
using test_support::expect_error;
using test_support::small_config;

namespace {

TEST(RmsNorm, ZeroInputStaysZero) {
  const Vector x = Vector::Zero(6);
  const Vector y = rms_norm(x, Vector::Ones(6), 1e-6, NormOffset::plain_gamma);
  EXPECT_EQ(y, Vector::Zero(6));
}

TEST(RmsNorm, ConstantVectorHasUnitRms) {
  const Vector y = rms_norm(Vector::Constant(5, 3.7), Vector::Ones(5), 1e-15, NormOffset::plain_gamma);
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_NEAR(y(i), 1.0, 1e-12);
}

TEST(RmsNorm, MatchesScalarLoop) {
  std::mt19937_64 rng(3);
  for (auto offset : {NormOffset::plain_gamma, NormOffset::one_plus_gamma}) {
    const Vector x = gaussian_vector(8, 2.0, rng);
    const Vector s = gaussian_vector(8, 1.0, rng);
    double ss = 0.0;
    for (int i = 0; i < 8; ++i) ss += x(i) * x(i);
    const double denom = std::sqrt(ss / 8.0 + 1e-6);
    const Vector y = rms_norm(x, s, 1e-6, offset);
    for (int i = 0; i < 8; ++i) {
      const double g = offset == NormOffset::plain_gamma ? s(i) : 1.0 + s(i);
      EXPECT_NEAR(y(i), x(i) / denom * g, 1e-12);
    }
  }
}

TEST(RmsNorm, DimensionMismatchIsAnError) {
  expect_error([] { rms_norm(Vector::Ones(4), Vector::Ones(5), 1e-6, NormOffset::plain_gamma); },
               ErrorCode::dimension_mismatch);
}

struct Variant {
  std::optional<double> rope;
  Activation act;
  EmbedScale embed;
  NormOffset offset;
};

TEST(Forward, MatchesHookFreeReference) {
  const std::vector<Variant> variants = {
      {std::nullopt, Activation::gelu_tanh_approx, EmbedScale::none, NormOffset::plain_gamma},
      {10000.0, Activation::gelu_tanh_approx, EmbedScale::sqrt_d_model, NormOffset::one_plus_gamma},
      {100.0, Activation::identity, EmbedScale::none, NormOffset::one_plus_gamma},
  };
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (const auto& v : variants) {
      ModelConfig c = small_config(2, 8);
      c.rope_base = v.rope;
      c.activation = v.act;
      c.embed_scale = v.embed;
      c.norm_offset = v.offset;
      const auto w = random_weights(c, seed);
      const std::vector<int> toks = {3, 0, 7};
      const TokenSequence ids(toks.begin(), toks.end());
      const auto run = forward(w, c, ids);
      const auto ref = reference::forward(w, c, toks);
      for (std::size_t p = 0; p < 3; ++p)
        for (std::size_t t = 0; t < c.vocab_size; ++t)
          EXPECT_NEAR(run.logits(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(t)), ref[p][t], 1e-10);
    }
  }
}

TEST(Forward, SelfSubstitutionIsIdentity) {
  const auto c = small_config();
  const auto w = random_weights(c, 11);
  const TokenSequence toks = {1, 4, 2, 9};
  const auto base = forward(w, c, toks);
  for (const auto& hp : base.cache.hook_points()) {
    const auto run = forward(w, c, toks, {Intervention::set(hp, base.cache.value(hp))});
    ASSERT_EQ(run.logits, base.logits) << to_string(hp);
  }
}

TEST(Forward, AddingZeroChangesNothing) {
  const auto c = small_config();
  const auto w = random_weights(c, 12);
  const TokenSequence toks = {5, 6, 7};
  const auto base = forward(w, c, toks);
  for (const auto& hp : base.cache.hook_points()) {
    const auto run = forward(w, c, toks, {Intervention::add(hp, Vector::Zero(static_cast<Eigen::Index>(hp.value_size(c))))});
    ASSERT_EQ(run.logits, base.logits) << to_string(hp);
  }
}

TEST(Forward, InterventionIsSeenDownstream) {
  const auto c = small_config();
  const auto w = random_weights(c, 13);
  const TokenSequence toks = {2, 3, 4};
  const Vector v = Vector::Constant(static_cast<Eigen::Index>(c.d_model), 0.25);
  const auto run = forward(w, c, toks, {Intervention::set(HookPoint::resid_pre(1, 2), v)});
  EXPECT_EQ(run.cache.value(HookPoint::resid_pre(1, 2)), v);
  // Layer 1 reads the overwritten stream: resid_post = v + attn_out + mlp_out.
  const Vector expect = v + run.cache.value(HookPoint::attn_out(1, 2)) + run.cache.value(HookPoint::mlp_out(1, 2));
  EXPECT_LT((run.cache.value(HookPoint::resid_post(1, 2)) - expect).norm(), 1e-12);

  const auto nrun = forward(w, c, toks, {Intervention::set(HookPoint::neuron_act(0, 3, 1), Vector::Constant(1, 5.0))});
  EXPECT_EQ(nrun.cache.layer(0).neuron_act(1, 3), 5.0);
  const Matrix expected_mlp = nrun.cache.layer(0).neuron_act * w.layers[0].W_out;
  EXPECT_LT((nrun.cache.layer(0).mlp_out - expected_mlp).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, InvalidInputsAreRejected) {
  const auto c = small_config();
  const auto w = random_weights(c, 14);
  const TokenSequence toks = {1, 2, 3};
  expect_error([&] { forward(w, c, TokenSequence{1, 11}); }, ErrorCode::token_out_of_range);
  expect_error([&] { forward(w, c, TokenSequence{-1}); }, ErrorCode::token_out_of_range);
  expect_error([&] { forward(w, c, TokenSequence{}); }, ErrorCode::invalid_argument);
  expect_error([&] { forward(w, c, TokenSequence(9, 0)); }, ErrorCode::invalid_argument);
  const Vector v = Vector::Zero(8);
  expect_error([&] { forward(w, c, toks, {Intervention::set(HookPoint::resid_pre(2, 0), v)}); }, ErrorCode::invalid_hook);
  expect_error([&] { forward(w, c, toks, {Intervention::set(HookPoint::resid_pre(0, 3), v)}); }, ErrorCode::invalid_hook);
  expect_error([&] { forward(w, c, toks, {Intervention::set(HookPoint::head_out(0, 2, 0), v)}); }, ErrorCode::invalid_hook);
  expect_error([&] { forward(w, c, toks, {Intervention::set(HookPoint::neuron_act(0, 12, 0), Vector::Zero(1))}); },
               ErrorCode::invalid_hook);
  expect_error([&] { forward(w, c, toks, {Intervention::set(HookPoint::mlp_out(0, 0), Vector::Zero(3))}); },
               ErrorCode::dimension_mismatch);
}

TEST(Forward, ResidualAndHeadDecomposition) {
  const auto c = small_config(3, 8);
  const auto w = random_weights(c, 15);
  const TokenSequence toks = {0, 5, 10, 3, 3};
  const auto run = forward(w, c, toks);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& lc = run.cache.layer(l);
    const Matrix diff = lc.resid_post - lc.resid_pre - lc.attn_out - lc.mlp_out;
    EXPECT_LT(diff.cwiseAbs().maxCoeff(), 1e-10);
    Matrix heads = Matrix::Zero(lc.attn_out.rows(), lc.attn_out.cols());
    for (const auto& h : lc.head_out) heads += h;
    EXPECT_LT((heads - lc.attn_out).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((lc.neuron_act * w.layers[l].W_out - lc.mlp_out).cwiseAbs().maxCoeff(), 1e-10);
    for (const auto& pat : lc.attn_pattern)
      for (Eigen::Index i = 0; i < pat.rows(); ++i) {
        EXPECT_NEAR(pat.row(i).sum(), 1.0, 1e-12);
        for (Eigen::Index j = i + 1; j < pat.cols(); ++j) EXPECT_EQ(pat(i, j), 0.0);
      }
  }
}

TEST(Forward, CausalMaskingIsExact) {
  const auto c = small_config(2, 8);
  const auto w = random_weights(c, 16);
  const TokenSequence a = {1, 2, 3, 4, 5};
  for (std::size_t p = 0; p < a.size(); ++p) {
    TokenSequence b = a;
    b[p] = (a[p] + 3) % 11;
    const auto ra = forward(w, c, a), rb = forward(w, c, b);
    for (const auto& hp : ra.cache.hook_points()) {
      if (hp.pos < p) {
        ASSERT_EQ(ra.cache.value(hp), rb.cache.value(hp)) << to_string(hp);
      }
    }
  }
}

TEST(Forward, DeterministicAcrossThreads) {
  const auto c = small_config(2, 8);
  const auto w = random_weights(c, 17);
  const TokenSequence toks = {4, 4, 1, 0};
  const auto ref = forward(w, c, toks);
  std::vector<ForwardResult> runs(8);
  parallel_for(runs.size(), [&](std::size_t i) { runs[i] = forward(w, c, toks); }, 4);
  for (const auto& r : runs) {
    EXPECT_EQ(r.logits, ref.logits);
    for (const auto& hp : ref.cache.hook_points()) ASSERT_EQ(r.cache.value(hp), ref.cache.value(hp));
    EXPECT_EQ(r.cache.final_rms(), ref.cache.final_rms());
  }
}

TEST(Forward, CacheListsEveryHookPointOnce) {
  const auto c = small_config(2, 8);
  const auto w = random_weights(c, 18);
  const auto run = forward(w, c, TokenSequence{1, 2, 3});
  const auto hps = run.cache.hook_points();
  // per layer and position: resid_pre, heads, attn_out, neurons, mlp_out, resid_post
  EXPECT_EQ(hps.size(), c.n_layers * 3 * (4 + c.n_heads + c.d_mlp));
  std::set<std::string> names;
  for (const auto& hp : hps) names.insert(to_string(hp));
  EXPECT_EQ(names.size(), hps.size());
  EXPECT_EQ(run.cache.final_rms().size(), 3);
  expect_error([&] { run.cache.value(HookPoint::resid_pre(2, 0)); }, ErrorCode::invalid_hook);
}

TEST(LogitDiff, Examples) {
  Vector logits = Vector::Zero(4);
  logits(1) = 2.0;
  logits(3) = 0.5;
  EXPECT_DOUBLE_EQ(logit_diff(logits, 1, 3), 1.5);
  EXPECT_EQ(logit_diff(logits, 2, 2), 0.0);
  std::mt19937_64 rng(5);
  const Vector r = gaussian_vector(10, 1.0, rng);
  for (TokenId g = 0; g < 10; ++g)
    for (TokenId b = 0; b < 10; ++b) EXPECT_EQ(logit_diff(r, g, b), -logit_diff(r, b, g));
  expect_error([&] { logit_diff(logits, 4, 0); }, ErrorCode::token_out_of_range);
}

TEST(ModelConfig, Validation) {
  ModelConfig c = small_config();
  EXPECT_NO_THROW(validate(c));
  c.d_model = 7;  // d_model need not equal n_heads * d_head
  EXPECT_NO_THROW(validate(c));
  auto bad = small_config();
  bad.n_heads = 0;
  expect_error([&] { validate(bad); }, ErrorCode::invalid_argument);
  bad = small_config();
  bad.vocab_size = 1;
  expect_error([&] { validate(bad); }, ErrorCode::invalid_argument);
  bad = small_config();
  bad.max_seq = 1;
  expect_error([&] { validate(bad); }, ErrorCode::invalid_argument);
  bad = small_config();
  bad.rope_base = 10000.0;
  bad.d_head = 3;
  expect_error([&] { validate(bad); }, ErrorCode::invalid_argument);
}

TEST(ModelWeights, Validation) {
  auto c = small_config();
  auto w = random_weights(c, 19);
  EXPECT_NO_THROW(validate(w, c));
  auto bad = w;
  bad.layers[1].W_in = Matrix::Zero(8, 11);
  expect_error([&] { validate(bad, c); }, ErrorCode::shape_mismatch);
  bad = w;
  bad.layers[0].W_Q[1](0, 0) = std::numeric_limits<double>::quiet_NaN();
  expect_error([&] { validate(bad, c); }, ErrorCode::non_finite);
  c.tied_embeddings = true;
  expect_error([&] { validate(w, c); }, ErrorCode::shape_mismatch);
  const auto tied = random_weights(c, 20);
  EXPECT_NO_THROW(validate(tied, c));
}

}  // namespace
