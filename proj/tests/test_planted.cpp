#include "test_support.hpp"

#include <algorithm>

using namespace circuit_lens;
using test_support::expect_error;
using test_support::planted;

namespace {

double neuron_act(const ActivationCache& cache, std::size_t layer, std::size_t neuron, std::size_t pos) {
  return cache.value(HookPoint::neuron_act(layer, neuron, pos))(0);
}

TEST(Planted, CopyHeadWritesScaledDirectionExactly) {
  const auto m = planted(0.0);
  const auto& o = m.oracle;
  for (const auto* lang : {&m.lexicon.english, &m.lexicon.spanish}) {
    for (const auto& p : generate_dataset(*lang, 40, 5, Split::train).pairs) {
      for (int side = 0; side < 2; ++side) {
        const auto& toks = side == 0 ? p.clean : p.corrupted;
        const Number n = side == 0 ? p.subject_number_clean : opposite(p.subject_number_clean);
        const auto run = forward(m.weights, m.config, toks);
        const Vector out = run.cache.value(HookPoint::head_out(o.copy_layer, o.copy_head, toks.size() - 1));
        const Vector expected = (n == Number::plur ? 1.0 : -1.0) * o.write_scale * o.direction;
        EXPECT_LE((out - expected).cwiseAbs().maxCoeff(), 1e-9);
      }
    }
  }
}

TEST(Planted, ReaderNeuronsFireOnTheirSide) {
  const auto m = planted(0.0);
  const auto& o = m.oracle;
  ASSERT_TRUE(o.one_sided_neuron);
  const double threshold = 0.1 * o.write_scale * o.write_scale;
  for (const auto* lang : {&m.lexicon.english, &m.lexicon.spanish}) {
    for (const auto& p : generate_dataset(*lang, 60, 8, Split::test).pairs) {
      const auto run = forward(m.weights, m.config, p.clean);
      const std::size_t last = p.clean.size() - 1;
      const bool plural = p.subject_number_clean == Number::plur;
      const double pl = neuron_act(run.cache, o.reader_layer, o.plural_neuron, last);
      const double sg = neuron_act(run.cache, o.reader_layer, o.singular_neuron, last);
      const double one = neuron_act(run.cache, o.reader_layer, *o.one_sided_neuron, last);
      EXPECT_EQ(pl > 0.1, plural) << pl;
      EXPECT_EQ(sg > 0.1, !plural) << sg;
      EXPECT_EQ(std::abs(one) > threshold, plural) << one;
      if (plural) {
        EXPECT_LT(one, 0.0);
      }
    }
  }
}

TEST(Planted, SameSeedSameWeights) {
  const auto a = planted(0.02, true, 42);
  const auto b = planted(0.02, true, 42);
  EXPECT_EQ(a.weights.token_embedding, b.weights.token_embedding);
  EXPECT_EQ(a.weights.unembedding, b.weights.unembedding);
  for (std::size_t l = 0; l < a.config.n_layers; ++l) {
    EXPECT_EQ(a.weights.layers[l].W_gate, b.weights.layers[l].W_gate);
    EXPECT_EQ(a.weights.layers[l].W_out, b.weights.layers[l].W_out);
    for (std::size_t h = 0; h < a.config.n_heads; ++h) {
      EXPECT_EQ(a.weights.layers[l].W_Q[h], b.weights.layers[l].W_Q[h]);
      EXPECT_EQ(a.weights.layers[l].W_O[h], b.weights.layers[l].W_O[h]);
    }
  }
  EXPECT_EQ(a.oracle.plural_neuron, b.oracle.plural_neuron);
  EXPECT_EQ(a.oracle.direction, b.oracle.direction);
  const auto c = planted(0.02, true, 43);
  EXPECT_NE(a.oracle.direction, c.oracle.direction);
}

TEST(Planted, SolvesBothLanguages) {
  for (double noise : {0.0, 0.02}) {
    const auto m = planted(noise);
    for (const auto* lang : {&m.lexicon.english, &m.lexicon.spanish}) {
      const auto ds = generate_dataset(*lang, 200, 9, Split::test);
      std::size_t correct = 0;
      for (const auto& p : ds.pairs)
        correct += last_logit_diff(forward(m.weights, m.config, p.clean), p.g, p.b) > 0.0 ? 1 : 0;
      EXPECT_GE(static_cast<double>(correct) / 200.0, 0.99) << lang->name << " noise " << noise;
    }
  }
}

TEST(Planted, OracleIsConsistentWithWeights) {
  const auto m = planted(0.0);
  const auto& o = m.oracle;
  EXPECT_NEAR(o.direction.norm(), 1.0, 1e-12);
  EXPECT_LT(o.copy_layer, o.reader_layer);
  EXPECT_EQ(o.subject_position, kSubjectSlot);
  EXPECT_EQ(o.plural_answers.size(), 2u);
  const auto top = promoted_tokens(m.weights, m.config, o.reader_layer, o.plural_neuron, PromoteSign::positive, 4);
  for (TokenId t : o.plural_answers)
    EXPECT_TRUE(std::any_of(top.begin(), top.end(), [&](const TokenScore& s) { return s.token == t; }));
  // Noise lands outside the planted circuit only.
  const auto noisy = planted(0.02);
  const auto& lw = noisy.weights.layers[o.copy_layer];
  EXPECT_EQ(lw.W_Q[o.copy_head], m.weights.layers[o.copy_layer].W_Q[o.copy_head]);
  EXPECT_EQ(noisy.weights.layers[o.reader_layer].W_out.row(static_cast<Eigen::Index>(o.plural_neuron)),
            m.weights.layers[o.reader_layer].W_out.row(static_cast<Eigen::Index>(o.plural_neuron)));
  EXPECT_NE(lw.W_Q[(o.copy_head + 1) % m.config.n_heads], m.weights.layers[o.copy_layer].W_Q[(o.copy_head + 1) % m.config.n_heads]);
}

struct PipelineResult {
  PatchGrid grid;
  std::vector<double> neurons;
  Direction pc1;
  Direction pc1_b;
  double flip_rate = 0.0;
};

PipelineResult run_pipeline(const PlantedModel& m, std::size_t n) {
  const auto& o = m.oracle;
  const auto& lex = m.lexicon;
  PipelineResult r;
  const auto en_test = generate_dataset(lex.english, n, 1, Split::test);
  r.grid = compute_grid(m.weights, m.config, en_test.pairs, PatchFamily::head_out_last_pos);
  r.neurons = attribution_report(m.weights, m.config, en_test.pairs, o.reader_layer).neurons;
  const auto en_train = generate_dataset(lex.english, n, 2, Split::train);
  const auto es_train = generate_dataset(lex.spanish, n, 2, Split::train);
  // The copy head is located from the grid, not read from the oracle.
  const auto [layer, head] = argmax_cell(r.grid.values_delta);
  r.pc1 = fit_direction(collect_head_outputs(m.weights, m.config, en_train.pairs, layer, head), "english/train");
  r.pc1_b = fit_direction(collect_head_outputs(m.weights, m.config, es_train.pairs, layer, head), "spanish/train");
  const auto es_val = generate_dataset(lex.spanish, n / 2, 3, Split::validation);
  const double ws = o.write_scale;
  const std::vector<double> grid = {0, 0.5 * ws, 1 * ws, 2 * ws, 4 * ws, 8 * ws};
  const auto sweep = alpha_sweep(m.weights, m.config, es_val.pairs, r.pc1, layer, head, grid);
  const auto es_test = generate_dataset(lex.spanish, n, 4, Split::test);
  const auto steered = steer_toward_opposite(m.weights, m.config, es_test.pairs, r.pc1, sweep.chosen_alpha, layer, head);
  r.flip_rate = std::min(steered.sing.flip_rate, steered.plur.flip_rate);
  return r;
}

TEST(OracleCheck, PassesOnDefaultNoise) {
  const auto m = planted(0.02);
  const auto r = run_pipeline(m, 100);
  AnalysisOutputs out;
  out.head_grid = &r.grid;
  out.neuron_layer = m.oracle.reader_layer;
  out.neuron_dlda = r.neurons;
  out.pc1 = &r.pc1;
  out.steering_flip_rate = r.flip_rate;
  const auto report = oracle_check(m.oracle, out);
  ASSERT_EQ(report.criteria.size(), 4u);
  for (const auto& c : report.criteria) EXPECT_TRUE(c.pass) << c.name << " measured " << c.measured << " " << c.detail;
  EXPECT_TRUE(report.all_pass);
  EXPECT_GE(std::abs(cosine(r.pc1.vector, r.pc1_b.vector)), 0.98);

  // Negative control: a shuffled grid moves the argmax off the planted head.
  PatchGrid shuffled = r.grid;
  const auto copy = static_cast<Eigen::Index>(m.oracle.copy_layer), head = static_cast<Eigen::Index>(m.oracle.copy_head);
  std::swap(shuffled.values_delta(copy, head), shuffled.values_delta(0, 0));
  out.head_grid = &shuffled;
  const auto bad = oracle_check(m.oracle, out);
  EXPECT_FALSE(bad.criteria[0].pass);
  EXPECT_FALSE(bad.all_pass);

  // Wrong reader layer fails criterion (ii).
  out.head_grid = &r.grid;
  out.neuron_layer = 0;
  EXPECT_FALSE(oracle_check(m.oracle, out).criteria[1].pass);
}

TEST(OracleCheck, ExactDirectionWithoutNoise) {
  const auto m = planted(0.0);
  const auto ds = generate_dataset(m.lexicon.spanish, 50, 6, Split::train);
  const auto dir = fit_direction(collect_head_outputs(m.weights, m.config, ds.pairs, m.oracle.copy_layer, m.oracle.copy_head), "es");
  EXPECT_GE(std::abs(cosine(dir.vector, m.oracle.direction)), 1.0 - 1e-6);
}

TEST(OracleCheck, Errors) {
  const auto m = planted(0.0);
  auto oracle = m.oracle;
  oracle.model_id = "aaaa";
  PatchGrid grid;
  grid.family = PatchFamily::head_out_last_pos;
  grid.values_delta = Matrix::Zero(4, 4);
  Direction dir;
  dir.vector = oracle.direction;
  AnalysisOutputs out;
  out.model_id = "bbbb";
  out.head_grid = &grid;
  out.pc1 = &dir;
  expect_error([&] { oracle_check(oracle, out); }, ErrorCode::model_mismatch);
  out.model_id = "aaaa";
  out.pc1 = nullptr;
  expect_error([&] { oracle_check(oracle, out); }, ErrorCode::invalid_argument);
  out.pc1 = &dir;
  grid.family = PatchFamily::resid_pre_grid;
  expect_error([&] { oracle_check(oracle, out); }, ErrorCode::invalid_argument);
}

TEST(PlantedSpec, ValidationErrors) {
  const std::size_t vocab = toy_lexicon().vocab_size();
  PlantedCircuitSpec spec;
  EXPECT_NO_THROW(validate(spec, vocab));
  {
    auto s = spec;
    Vector d = Vector::Zero(64), m = Vector::Zero(64);
    d(0) = 1.0;
    m(0) = 0.6;
    m(1) = 0.8;
    s.number_direction = d;
    s.subject_marker = m;
    expect_error([&] { validate(s, vocab); }, ErrorCode::invalid_argument);
    s.subject_marker = Vector::Unit(64, 1);
    EXPECT_NO_THROW(validate(s, vocab));
    s.number_direction = 2.0 * d;
    expect_error([&] { validate(s, vocab); }, ErrorCode::invalid_argument);
    s.number_direction = Vector::Unit(32, 0);
    expect_error([&] { validate(s, vocab); }, ErrorCode::invalid_argument);
  }
  {
    auto s = spec;
    s.copy_layer = 3;
    expect_error([&] { validate(s, vocab); }, ErrorCode::invalid_argument);
    s = spec;
    s.config.d_model = 4;
    s.config.d_head = 2;
    expect_error([&] { validate(s, vocab); }, ErrorCode::invalid_argument);
    s = spec;
    s.write_scale = 0.0;
    expect_error([&] { validate(s, vocab); }, ErrorCode::invalid_argument);
    s = spec;
    s.noise_std = -1.0;
    expect_error([&] { validate(s, vocab); }, ErrorCode::invalid_argument);
    s = spec;
    s.copy_head = 4;
    expect_error([&] { build_planted_model(s); }, ErrorCode::invalid_argument);
  }
  // A given number direction is used as is.
  auto s = spec;
  s.number_direction = Vector::Unit(64, 5);
  s.subject_marker = Vector::Unit(64, 9);
  EXPECT_EQ(build_planted_model(s).oracle.direction, Vector::Unit(64, 5));
}

}  // namespace
