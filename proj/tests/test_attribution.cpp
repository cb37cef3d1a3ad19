#include "test_support.hpp"

#include <algorithm>
#include <random>

using namespace circuit_lens;
using test_support::expect_error;
using test_support::random_pairs;
using test_support::rel_err;

namespace {

ModelConfig random_config(std::mt19937_64& rng) {
  ModelConfig c;
  c.n_layers = std::uniform_int_distribution<std::size_t>(2, 4)(rng);
  c.n_heads = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
  c.d_head = std::uniform_int_distribution<std::size_t>(1, 4)(rng) * 2;
  c.d_model = std::uniform_int_distribution<std::size_t>(4, 64)(rng);
  c.d_mlp = std::uniform_int_distribution<std::size_t>(4, 32)(rng);
  c.vocab_size = std::uniform_int_distribution<std::size_t>(3, 20)(rng);
  c.max_seq = 8;
  c.norm_offset = rng() % 2 ? NormOffset::one_plus_gamma : NormOffset::plain_gamma;
  c.activation = rng() % 2 ? Activation::identity : Activation::gelu_tanh_approx;
  if (rng() % 2) c.rope_base = 10000.0;
  if (rng() % 2) c.embed_scale = EmbedScale::sqrt_d_model;
  return c;
}

// Independent sum: embedding plus every block output, projected through the
// frozen final norm, compared against logits taken from the forward pass.
TEST(Dlda, AdditivityOnRandomModels) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = random_config(rng);
    const auto w = random_weights(c, rng());
    for (const auto& p : random_pairs(c, 3, 6, rng())) {
      const auto run = forward(w, c, p.clean);
      double total = dlda_component(run.cache, w, c, p.g, p.b, Component::embedding());
      for (std::size_t l = 0; l < c.n_layers; ++l) {
        total += dlda_component(run.cache, w, c, p.g, p.b, Component::attn(l));
        total += dlda_component(run.cache, w, c, p.g, p.b, Component::mlp(l));
        double attn_heads = 0.0;
        for (std::size_t h = 0; h < c.n_heads; ++h)
          attn_heads += dlda_component(run.cache, w, c, p.g, p.b, Component::attn_head(l, h));
        EXPECT_LE(rel_err(attn_heads, dlda_component(run.cache, w, c, p.g, p.b, Component::attn(l))), 1e-8);
        const Vector nd = neuron_dlda(run.cache, w, c, l, p.g, p.b);
        EXPECT_LE(rel_err(nd.sum(), dlda_component(run.cache, w, c, p.g, p.b, Component::mlp(l))), 1e-8)
            << "trial " << trial << " layer " << l;
      }
      const double ld = last_logit_diff(run, p.g, p.b);
      EXPECT_LE(std::abs(total - ld) / std::max(1e-300, std::abs(ld)), 1e-8) << "trial " << trial;
    }
  }
}

TEST(Dlda, ReportMatchesPerPairSums) {
  const auto c = test_support::small_config(3, 8);
  const auto w = random_weights(c, 21);
  const auto pairs = random_pairs(c, 7, 5, 3);
  const auto report = attribution_report(w, c, pairs, 1, true, 1);
  double total = report.embedding;
  for (std::size_t l = 0; l < c.n_layers; ++l) total += report.attn[l] + report.mlp[l];
  EXPECT_LE(rel_err(total, report.mean_logit_diff), 1e-8);
  double neurons = 0.0;
  for (double v : report.neurons) neurons += v;
  EXPECT_LE(rel_err(neurons, report.mlp[1]), 1e-8);
  const auto parallel = attribution_report(w, c, pairs, 1, true, 3);
  EXPECT_EQ(parallel.mlp, report.mlp);
  EXPECT_EQ(parallel.neurons, report.neurons);
  expect_error([&] { attribution_report(w, c, pairs, 3); }, ErrorCode::invalid_argument);
  expect_error([&] { attribution_report(w, c, std::vector<ContrastivePair>{}); }, ErrorCode::invalid_argument);
}

TEST(Dlda, ZeroComponentAndRawNorm) {
  const auto c = test_support::small_config(2, 8);
  auto w = random_weights(c, 4);
  w.layers[1].W_out.setZero();
  const auto run = forward(w, c, TokenSequence{1, 2, 3});
  EXPECT_EQ(dlda_component(run.cache, w, c, 4, 5, Component::mlp(1)), 0.0);
  // Without the frozen norm the readout is the raw unembedding difference.
  const Vector raw = logit_diff_direction(w, c, run.cache, 4, 5, 2, false);
  EXPECT_EQ(raw, Vector(w.unembedding.col(4) - w.unembedding.col(5)));
  expect_error([&] { logit_diff_direction(w, c, run.cache, 4, 99, 2); }, ErrorCode::token_out_of_range);
}

TEST(Dlda, NegatedActivationNegatesContribution) {
  const auto c = test_support::small_config(2, 8);
  const auto w = random_weights(c, 9);
  const TokenSequence toks = {3, 1, 4, 1, 5};
  const auto run = forward(w, c, toks);
  const Vector nd = neuron_dlda(run.cache, w, c, 0, 2, 7);
  const std::size_t last = toks.size() - 1;
  // Setting neuron 5 to minus its value, holding the norm denominator fixed.
  const double act = run.cache.value(HookPoint::neuron_act(0, 5, last))(0);
  const Vector readout = logit_diff_direction(w, c, run.cache, 2, 7, last);
  const double direct = -act * w.layers[0].W_out.row(5).dot(readout.transpose());
  EXPECT_NEAR(direct, -nd(5), 1e-15);
}

TEST(PromotedTokens, RankingProperties) {
  const auto c = test_support::small_config(2, 8);
  auto w = random_weights(c, 13);
  const auto pos = promoted_tokens(w, c, 1, 3, PromoteSign::positive, c.vocab_size);
  const auto neg = promoted_tokens(w, c, 1, 3, PromoteSign::negative, c.vocab_size);
  ASSERT_EQ(pos.size(), c.vocab_size);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    EXPECT_EQ(pos[i].token, neg[pos.size() - 1 - i].token);
    EXPECT_EQ(pos[i].score, -neg[pos.size() - 1 - i].score);
  }
  w.layers[1].W_out.row(3) *= 7.5;
  const auto scaled = promoted_tokens(w, c, 1, 3, PromoteSign::positive, c.vocab_size);
  for (std::size_t i = 0; i < pos.size(); ++i) EXPECT_EQ(scaled[i].token, pos[i].token);
  expect_error([&] { promoted_tokens(w, c, 1, 3, PromoteSign::positive, c.vocab_size + 1); },
               ErrorCode::invalid_argument);
  expect_error([&] { promoted_tokens(w, c, 1, c.d_mlp, PromoteSign::positive, 1); }, ErrorCode::invalid_argument);
}

TEST(TopK, OneHotPermutationAndTies) {
  Vector logits = Vector::Zero(6);
  logits(4) = 1.0;
  const auto top = top_k_tokens(logits, 6);
  EXPECT_EQ(top.front().token, 4);
  std::vector<TokenId> ids;
  for (const auto& t : top) ids.push_back(t.token);
  // Remaining zeros come in ascending id order.
  EXPECT_EQ(ids, (std::vector<TokenId>{4, 0, 1, 2, 3, 5}));
  expect_error([&] { top_k_tokens(logits, 7); }, ErrorCode::invalid_argument);
}

TEST(OvPattern, SymmetryAndOneHot) {
  // Zero queries give uniform causal attention; orthonormal embeddings with
  // identity V and O give equal-norm value outputs.
  ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 1;
  c.d_model = 4;
  c.d_head = 4;
  c.d_mlp = 2;
  c.vocab_size = 4;
  c.max_seq = 4;
  auto w = zero_weights(c);
  w.token_embedding = Matrix::Identity(4, 4);
  w.layers[0].W_V[0] = Matrix::Identity(4, 4);
  w.layers[0].W_O[0] = Matrix::Identity(4, 4);
  w.unembedding = Matrix::Identity(4, 4);
  const auto run = forward(w, c, TokenSequence{0, 1, 2, 3});
  const Matrix ov = ov_weighted_pattern(run.cache, w, 0, 0);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) EXPECT_NEAR(ov(i, j), j <= i ? 1.0 / static_cast<double>(i + 1) : 0.0, 1e-12);

  // Row 0 always has a one-hot causal pattern.
  const auto c2 = test_support::small_config(2, 8);
  const auto w2 = random_weights(c2, 5);
  const auto run2 = forward(w2, c2, TokenSequence{1, 2, 3, 4});
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t h = 0; h < 2; ++h) {
      const Matrix m = ov_weighted_pattern(run2.cache, w2, l, h);
      EXPECT_NEAR(m(0, 0), 1.0, 1e-12);
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        EXPECT_GE(m.row(i).minCoeff(), 0.0);
        EXPECT_NEAR(m.row(i).sum(), 1.0, 1e-12);
      }
    }
  expect_error([&] { ov_weighted_pattern(run2.cache, w2, 2, 0); }, ErrorCode::invalid_argument);
  expect_error([&] { ov_weighted_pattern(run2.cache, w2, 0, 2); }, ErrorCode::invalid_argument);
}

class PlantedAttribution : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    model_ = new PlantedModel(test_support::planted(0.02));
    data_ = new Dataset(generate_dataset(model_->lexicon.spanish, 40, 2, Split::test));
  }
  static void TearDownTestSuite() {
    delete model_;
    delete data_;
  }
  static PlantedModel* model_;
  static Dataset* data_;
};
PlantedModel* PlantedAttribution::model_ = nullptr;
Dataset* PlantedAttribution::data_ = nullptr;

TEST_F(PlantedAttribution, AdditivityAndReaderDominance) {
  const auto& m = *model_;
  const auto& o = m.oracle;
  for (const auto& p : data_->pairs) {
    for (const auto* toks : {&p.clean, &p.corrupted}) {
      const auto run = forward(m.weights, m.config, *toks);
      double total = dlda_component(run.cache, m.weights, m.config, p.g, p.b, Component::embedding());
      for (std::size_t l = 0; l < m.config.n_layers; ++l) {
        const double mlp = dlda_component(run.cache, m.weights, m.config, p.g, p.b, Component::mlp(l));
        total += mlp + dlda_component(run.cache, m.weights, m.config, p.g, p.b, Component::attn(l));
        EXPECT_LE(rel_err(neuron_dlda(run.cache, m.weights, m.config, l, p.g, p.b).sum(), mlp), 1e-8);
      }
      const double ld = last_logit_diff(run, p.g, p.b);
      EXPECT_LE(std::abs(total - ld) / std::abs(ld), 1e-8);
    }
  }

  const auto report = attribution_report(m.weights, m.config, data_->pairs, o.reader_layer);
  double abs_total = std::abs(report.embedding);
  for (std::size_t l = 0; l < m.config.n_layers; ++l) abs_total += std::abs(report.attn[l]) + std::abs(report.mlp[l]);
  EXPECT_GE(std::abs(report.mlp[o.reader_layer]), 0.9 * abs_total);

  const double weakest = std::min(std::abs(report.neurons[o.plural_neuron]), std::abs(report.neurons[o.singular_neuron]));
  double strongest_other = 0.0;
  for (std::size_t n = 0; n < report.neurons.size(); ++n)
    if (n != o.plural_neuron && n != o.singular_neuron) strongest_other = std::max(strongest_other, std::abs(report.neurons[n]));
  EXPECT_GE(weakest, 10.0 * strongest_other);
  const auto ranked = rank_by_magnitude(report.neurons);
  EXPECT_TRUE((ranked[0] == o.plural_neuron && ranked[1] == o.singular_neuron) ||
              (ranked[1] == o.plural_neuron && ranked[0] == o.singular_neuron));
}

TEST_F(PlantedAttribution, PromotedTokensFollowTheConstruction) {
  const auto& m = *model_;
  const auto& o = m.oracle;
  const auto contains = [](const std::vector<TokenScore>& top, TokenId t) {
    return std::any_of(top.begin(), top.end(), [&](const TokenScore& s) { return s.token == t; });
  };
  const auto plural_top = promoted_tokens(m.weights, m.config, o.reader_layer, o.plural_neuron, PromoteSign::positive, 4);
  for (TokenId t : o.plural_answers) EXPECT_TRUE(contains(plural_top, t)) << m.lexicon.words[t];
  const auto singular_top = promoted_tokens(m.weights, m.config, o.reader_layer, o.singular_neuron, PromoteSign::positive, 4);
  for (TokenId t : o.singular_answers) EXPECT_TRUE(contains(singular_top, t)) << m.lexicon.words[t];
  // The negative side of the plural neuron is the singular side.
  const auto plural_neg = promoted_tokens(m.weights, m.config, o.reader_layer, o.plural_neuron, PromoteSign::negative, 4);
  for (TokenId t : o.singular_answers) EXPECT_TRUE(contains(plural_neg, t));
  ASSERT_TRUE(o.one_sided_neuron.has_value());
  const auto foreign =
      promoted_tokens(m.weights, m.config, o.reader_layer, *o.one_sided_neuron, PromoteSign::negative, o.foreign_plurals.size());
  for (TokenId t : o.foreign_plurals) EXPECT_TRUE(contains(foreign, t)) << m.lexicon.words[t];
}

TEST_F(PlantedAttribution, TopTokensAndAttentionPattern) {
  const auto& m = *model_;
  const auto& o = m.oracle;
  for (const auto& p : data_->pairs) {
    const auto run = forward(m.weights, m.config, p.clean);
    const auto top = top_k_tokens(run.logits.row(run.logits.rows() - 1), m.config.vocab_size);
    const auto rank_of = [&](TokenId t) {
      return std::find_if(top.begin(), top.end(), [&](const TokenScore& s) { return s.token == t; }) - top.begin();
    };
    EXPECT_LT(rank_of(p.g), rank_of(p.b));
    const Matrix ov = ov_weighted_pattern(run.cache, m.weights, o.copy_layer, o.copy_head);
    EXPECT_GE(ov(ov.rows() - 1, static_cast<Eigen::Index>(o.subject_position)), 0.9);
  }
  const Matrix mean = mean_ov_weighted_pattern(m.weights, m.config, data_->pairs, o.copy_layer, o.copy_head);
  EXPECT_GE(mean(mean.rows() - 1, static_cast<Eigen::Index>(o.subject_position)), 0.9);
}

}  // namespace
