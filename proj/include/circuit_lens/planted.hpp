#pragma once

#include "circuit_lens/attribution.hpp"
#include "circuit_lens/directions.hpp"
#include "circuit_lens/error.hpp"
#include "circuit_lens/lexicon.hpp"
#include "circuit_lens/model.hpp"
#include "circuit_lens/patching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace circuit_lens {

/// Parameters of a handcrafted agreement circuit: a copy head moves a
/// subject-number direction d from the subject noun to the last position and
/// gated-MLP reader neurons turn it into verb-number logits.
struct PlantedCircuitSpec {
  ModelConfig config = default_config();
  std::size_t copy_layer = 2;
  std::size_t copy_head = 1;
  std::size_t reader_layer = 3;
  std::optional<Vector> number_direction;  // drawn from seed when unset
  std::optional<Vector> subject_marker;    // drawn from seed when unset
  double write_scale = 4.0;
  std::optional<std::size_t> n_distractor_heads_with_noise;  // unset = every other head
  double noise_std = 0.0;
  bool one_sided_neuron = true;
  std::uint64_t seed = 0;

  static ModelConfig default_config() {
    ModelConfig c;
    c.n_layers = 4;
    c.n_heads = 4;
    c.d_model = 64;
    c.d_head = 16;
    c.d_mlp = 256;
    c.max_seq = 16;
    c.rope_base = std::nullopt;
    c.norm_eps = 1e-6;
    c.activation = Activation::gelu_tanh_approx;
    c.embed_scale = EmbedScale::none;
    c.norm_offset = NormOffset::plain_gamma;
    return c;
  }
};

struct PlantedOracle {
  std::string model_id;
  std::size_t copy_layer = 0;
  std::size_t copy_head = 0;
  Vector direction;
  std::size_t reader_layer = 0;
  std::size_t plural_neuron = 0;
  std::size_t singular_neuron = 0;
  std::optional<std::size_t> one_sided_neuron;
  std::vector<TokenId> plural_answers;    // promoted by the plural neuron, positive sign
  std::vector<TokenId> singular_answers;  // promoted by the singular neuron, positive sign
  std::vector<TokenId> foreign_plurals;   // promoted by the one-sided neuron, negative sign
  std::size_t subject_position = kSubjectSlot;
  double write_scale = 0.0;
};

struct PlantedModel {
  ModelConfig config;
  ModelWeights weights;
  PlantedOracle oracle;
  ToyLexicon lexicon;
};

namespace detail {

inline constexpr double kAnchorScale = 1.0;      // constant component on every token
inline constexpr double kMarkerScale = 1.0;      // subject marker m on subject nouns
inline constexpr double kNumberScale = 1.0;      // +/- d on subject nouns
inline constexpr double kIdentityScale = 1.0;    // per-token lexical component
inline constexpr double kAttentionGap = 40.0;    // subject score minus every other score
inline constexpr double kGateTarget = 4.0;       // reader gate pre-activation when engaged
inline constexpr double kVerbWrite = 4.0;        // o-component written by a reader neuron
inline constexpr double kForeignWrite = 1.0;     // f-component written by the one-sided neuron

inline Vector unit_orthogonal_to(Vector v, const std::vector<Vector>& basis) {
  for (int pass = 0; pass < 2; ++pass)
    for (const auto& b : basis) v -= b.dot(v) * b;
  const double n = v.norm();
  require(n > 1e-8, ErrorCode::invalid_argument, "could not complete orthonormal frame");
  return v / n;
}

inline double activation_fn(Activation a, double x) {
  return a == Activation::gelu_tanh_approx ? gelu_tanh(x) : x;
}

}  // namespace detail

inline void validate(const PlantedCircuitSpec& spec, std::size_t vocab_size) {
  ModelConfig c = spec.config;
  c.vocab_size = vocab_size;
  validate(c);
  require(spec.copy_layer < c.n_layers && spec.copy_head < c.n_heads, ErrorCode::invalid_argument,
          "copy head outside the model");
  require(spec.reader_layer < c.n_layers, ErrorCode::invalid_argument, "reader layer outside the model");
  require(spec.copy_layer < spec.reader_layer, ErrorCode::invalid_argument,
          "copy head must sit in an earlier layer than the reader MLP");
  require(c.d_model >= 8, ErrorCode::invalid_argument,
          "d_model too small for the reserved directions (dimension overflow)");
  require(c.d_mlp >= 3, ErrorCode::invalid_argument, "d_mlp too small for the reader neurons");
  require(c.max_seq >= kTemplateLength, ErrorCode::invalid_argument,
          "max_seq shorter than the sentence template");
  require(spec.write_scale > 0.0 && std::isfinite(spec.write_scale), ErrorCode::invalid_argument,
          "write_scale must be positive");
  require(spec.noise_std >= 0.0 && std::isfinite(spec.noise_std), ErrorCode::invalid_argument,
          "noise_std must be non-negative");
  for (const auto* v : {&spec.number_direction, &spec.subject_marker}) {
    if (*v) {
      require(static_cast<std::size_t>((*v)->size()) == c.d_model, ErrorCode::invalid_argument,
              "planted direction has the wrong dimension");
      require(std::abs((*v)->norm() - 1.0) < 1e-10, ErrorCode::invalid_argument,
              "planted directions must be unit vectors");
    }
  }
  if (spec.number_direction && spec.subject_marker) {
    require(std::abs(spec.number_direction->dot(*spec.subject_marker)) < 1e-10,
            ErrorCode::invalid_argument, "number direction and subject marker must be orthogonal");
  }
  if (spec.n_distractor_heads_with_noise)
    require(*spec.n_distractor_heads_with_noise < c.n_layers * c.n_heads,
            ErrorCode::invalid_argument, "more distractor heads than the model has");
}

/// Builds weights implementing the circuit over the built-in toy lexicon.
inline PlantedModel build_planted_model(const PlantedCircuitSpec& spec) {
  PlantedModel pm;
  pm.lexicon = toy_lexicon();
  const ToyLexicon& lex = pm.lexicon;
  validate(spec, lex.vocab_size());

  ModelConfig& config = pm.config;
  config = spec.config;
  config.vocab_size = lex.vocab_size();
  config.tied_embeddings = false;
  pm.weights = zero_weights(config);
  ModelWeights& w = pm.weights;

  const auto D = static_cast<Eigen::Index>(config.d_model);
  const double Dd = static_cast<double>(config.d_model);
  const double eps = config.norm_eps;
  // Norm scales carry no information here: gamma_eff = 1 in either convention.
  const double neutral = config.norm_offset == NormOffset::plain_gamma ? 1.0 : 0.0;
  for (auto& layer : w.layers) {
    layer.attn_norm.setConstant(neutral);
    layer.mlp_norm.setConstant(neutral);
  }
  w.final_norm.setConstant(neutral);
  const double embed_mult = config.embed_scale == EmbedScale::sqrt_d_model ? std::sqrt(Dd) : 1.0;

  std::mt19937_64 rng(spec.seed);
  std::vector<Vector> frame;
  const auto next_unit = [&](const std::optional<Vector>& given) {
    Vector v = given ? *given : gaussian_vector(D, 1.0, rng);
    frame.push_back(detail::unit_orthogonal_to(v, frame));
    return frame.back();
  };
  const Vector d = next_unit(spec.number_direction);
  const Vector m = next_unit(spec.subject_marker);
  const Vector anchor = next_unit(std::nullopt);
  const Vector verb_out = next_unit(std::nullopt);
  const Vector foreign_out = next_unit(std::nullopt);
  const auto free_unit = [&] { return detail::unit_orthogonal_to(gaussian_vector(D, 1.0, rng), frame); };

  // Embeddings: anchor + lexical identity everywhere; subjects add m and +/-d.
  for (std::size_t t = 0; t < lex.vocab_size(); ++t)
    w.token_embedding.row(static_cast<Eigen::Index>(t)) =
        (detail::kAnchorScale * anchor + detail::kIdentityScale * free_unit()).transpose() / embed_mult;
  for (const LanguageSpec* lang : {&lex.english, &lex.spanish}) {
    for (const auto& noun : lang->subject_nouns) {
      w.token_embedding.row(lang->id(noun.sing)) +=
          (detail::kMarkerScale * m - detail::kNumberScale * d).transpose() / embed_mult;
      w.token_embedding.row(lang->id(noun.plur)) +=
          (detail::kMarkerScale * m + detail::kNumberScale * d).transpose() / embed_mult;
    }
  }

  // Unembedding: answer verbs read the shared verb-number direction.
  for (std::size_t t = 0; t < lex.vocab_size(); ++t)
    w.unembedding.col(static_cast<Eigen::Index>(t)) = free_unit();
  const auto set_unembed = [&](const std::string& word, const Vector& v) {
    const TokenId id = lex.english.id(word);
    w.unembedding.col(id) = v;
  };
  // Both answers of a language share their language component, so the
  // answer logit difference reads the verb-number direction alone.
  for (const LanguageSpec* lang : {&lex.english, &lex.spanish}) {
    const Vector language_part = 0.5 * free_unit();
    set_unembed(lang->answer_verbs.plur, verb_out + language_part);
    set_unembed(lang->answer_verbs.sing, -verb_out + language_part);
  }
  for (const auto& word : lex.plural_verb_extras) set_unembed(word, 0.5 * verb_out + 0.3 * free_unit());
  for (const auto& word : lex.singular_verb_extras) set_unembed(word, -0.5 * verb_out + 0.3 * free_unit());
  for (const auto& word : lex.foreign_plural_verbs) set_unembed(word, foreign_out + 0.3 * free_unit());

  // Noise-free residual norms the construction is calibrated against.
  const double subject_sq = detail::kAnchorScale * detail::kAnchorScale +
                            detail::kIdentityScale * detail::kIdentityScale +
                            detail::kMarkerScale * detail::kMarkerScale +
                            detail::kNumberScale * detail::kNumberScale;
  const double plain_sq = detail::kAnchorScale * detail::kAnchorScale +
                          detail::kIdentityScale * detail::kIdentityScale;
  const double ws = spec.write_scale;
  const double rms_subject = std::sqrt(subject_sq / Dd + eps);
  const double rms_last = std::sqrt(plain_sq / Dd + eps);
  const double rms_reader = std::sqrt((plain_sq + ws * ws) / Dd + eps);

  // Copy head: query reads the anchor, key reads the subject marker, value
  // reads d and writes write_scale * d.
  {
    LayerWeights& lw = w.layers[spec.copy_layer];
    const std::size_t h = spec.copy_head;
    const double d_head = static_cast<double>(config.d_head);
    const double key_scale = detail::kAttentionGap * std::sqrt(d_head) * rms_last * rms_subject /
                             (detail::kAnchorScale * detail::kMarkerScale);
    lw.W_Q[h].col(0) = anchor;
    lw.W_K[h].col(0) = key_scale * m;
    lw.W_V[h].col(0) = d;
    lw.W_O[h].row(0) = (ws * rms_subject / detail::kNumberScale) * d.transpose();
  }

  // Reader MLP.
  std::vector<std::size_t> neuron_ids(config.d_mlp);
  std::iota(neuron_ids.begin(), neuron_ids.end(), std::size_t{0});
  std::shuffle(neuron_ids.begin(), neuron_ids.end(), rng);
  PlantedOracle& oracle = pm.oracle;
  oracle.copy_layer = spec.copy_layer;
  oracle.copy_head = spec.copy_head;
  oracle.direction = d;
  oracle.reader_layer = spec.reader_layer;
  oracle.plural_neuron = neuron_ids[0];
  oracle.singular_neuron = neuron_ids[1];
  if (spec.one_sided_neuron) oracle.one_sided_neuron = neuron_ids[2];
  oracle.subject_position = kSubjectSlot;
  oracle.write_scale = ws;
  for (const LanguageSpec* lang : {&lex.english, &lex.spanish}) {
    oracle.plural_answers.push_back(lang->answer(Number::plur));
    oracle.singular_answers.push_back(lang->answer(Number::sing));
  }
  for (const auto& word : lex.foreign_plural_verbs) oracle.foreign_plurals.push_back(lex.english.id(word));

  {
    LayerWeights& lw = w.layers[spec.reader_layer];
    const double gate_scale = detail::kGateTarget * rms_reader / ws;
    // |activation| = write_scale^2 on the engaged side.
    const double in_scale = ws * rms_reader / detail::activation_fn(config.activation, detail::kGateTarget);
    Vector plural_write = Vector::Zero(D);
    for (TokenId t : oracle.plural_answers) plural_write += w.unembedding.col(t);
    for (TokenId t : oracle.singular_answers) plural_write -= w.unembedding.col(t);
    plural_write = plural_write.normalized() * (detail::kVerbWrite / (ws * ws));

    const auto plant = [&](std::size_t n, double gate_sign, double in_sign, const Vector& out_row) {
      const auto col = static_cast<Eigen::Index>(n);
      lw.W_gate.col(col) = gate_sign * gate_scale * d;
      lw.W_in.col(col) = in_sign * in_scale * d;
      lw.W_out.row(col) = out_row.transpose();
    };
    plant(oracle.plural_neuron, 1.0, 1.0, plural_write);
    plant(oracle.singular_neuron, -1.0, -1.0, -plural_write);
    if (oracle.one_sided_neuron) {
      // Engages only on plural subjects, with a negative activation that
      // writes toward the foreign plural verbs.
      plant(*oracle.one_sided_neuron, 1.0, -1.0,
            -foreign_out * (detail::kForeignWrite / (ws * ws)));
    }
  }

  // Distractor noise on every other head and neuron.
  if (spec.noise_std > 0.0) {
    // Entries are noise_std times a unit-variance fan-in initialisation, so a
    // noisy block's output has magnitude ~noise_std regardless of width.
    const double s_model = spec.noise_std / std::sqrt(Dd);
    const double s_head = spec.noise_std / std::sqrt(static_cast<double>(config.d_head));
    const double s_mlp = spec.noise_std / std::sqrt(static_cast<double>(config.d_mlp));
    const std::size_t n_noisy_heads =
        spec.n_distractor_heads_with_noise.value_or(config.n_layers * config.n_heads - 1);
    std::size_t noisy = 0;
    for (std::size_t l = 0; l < config.n_layers && noisy < n_noisy_heads; ++l) {
      for (std::size_t h = 0; h < config.n_heads && noisy < n_noisy_heads; ++h) {
        if (l == spec.copy_layer && h == spec.copy_head) continue;
        LayerWeights& lw = w.layers[l];
        lw.W_Q[h] = gaussian_matrix(D, lw.W_Q[h].cols(), s_model, rng);
        lw.W_K[h] = gaussian_matrix(D, lw.W_K[h].cols(), s_model, rng);
        lw.W_V[h] = gaussian_matrix(D, lw.W_V[h].cols(), s_model, rng);
        lw.W_O[h] = gaussian_matrix(lw.W_O[h].rows(), D, s_head, rng);
        ++noisy;
      }
    }
    for (std::size_t l = 0; l < config.n_layers; ++l) {
      LayerWeights& lw = w.layers[l];
      for (std::size_t n = 0; n < config.d_mlp; ++n) {
        if (l == spec.reader_layer &&
            (n == oracle.plural_neuron || n == oracle.singular_neuron ||
             (oracle.one_sided_neuron && n == *oracle.one_sided_neuron)))
          continue;
        const auto col = static_cast<Eigen::Index>(n);
        lw.W_gate.col(col) = gaussian_vector(D, s_model, rng);
        lw.W_in.col(col) = gaussian_vector(D, s_model, rng);
        lw.W_out.row(col) = gaussian_vector(D, s_mlp, rng).transpose();
      }
    }
  }

  validate(w, config);
  return pm;
}

struct OracleCriterion {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct OracleReport {
  std::vector<OracleCriterion> criteria;
  bool all_pass = false;
};

/// Analysis results produced on a planted model, as consumed by oracle_check.
struct AnalysisOutputs {
  std::string model_id;
  const PatchGrid* head_grid = nullptr;     // head_out_last_pos family
  std::size_t neuron_layer = 0;
  std::vector<double> neuron_dlda;          // per neuron of neuron_layer
  const Direction* pc1 = nullptr;
  double steering_flip_rate = 0.0;
};

inline constexpr double kOracleCosine = 0.99;
inline constexpr double kOracleFlipRate = 0.95;

/// Scores analysis outputs against the planted ground truth.
inline OracleReport oracle_check(const PlantedOracle& oracle, const AnalysisOutputs& outputs) {
  if (!oracle.model_id.empty() && !outputs.model_id.empty())
    require(oracle.model_id == outputs.model_id, ErrorCode::model_mismatch,
            "analysis outputs come from model " + outputs.model_id + ", oracle describes " +
                oracle.model_id);
  require(outputs.head_grid && outputs.pc1, ErrorCode::invalid_argument,
          "oracle_check needs a head grid and a direction");
  require(outputs.head_grid->family == PatchFamily::head_out_last_pos, ErrorCode::invalid_argument,
          "oracle_check needs the head_out_last_pos grid");

  OracleReport report;
  {
    const Matrix& delta = outputs.head_grid->values_delta;
    const auto [r, c] = argmax_cell(delta);
    double other = 0.0;
    for (Eigen::Index i = 0; i < delta.rows(); ++i)
      for (Eigen::Index j = 0; j < delta.cols(); ++j)
        if (!(static_cast<std::size_t>(i) == oracle.copy_layer &&
              static_cast<std::size_t>(j) == oracle.copy_head))
          other = std::max(other, std::abs(delta(i, j)));
    const bool in_range = oracle.copy_layer < static_cast<std::size_t>(delta.rows()) &&
                          oracle.copy_head < static_cast<std::size_t>(delta.cols());
    const double planted = in_range ? delta(static_cast<Eigen::Index>(oracle.copy_layer),
                                            static_cast<Eigen::Index>(oracle.copy_head))
                                    : 0.0;
    report.criteria.push_back(
        {"head_localization", in_range && r == oracle.copy_layer && c == oracle.copy_head,
         other > 0.0 ? planted / other : std::numeric_limits<double>::infinity(), 1.0,
         "argmax cell L" + std::to_string(r) + "H" + std::to_string(c) + ", planted L" +
             std::to_string(oracle.copy_layer) + "H" + std::to_string(oracle.copy_head)});
  }
  {
    std::vector<std::size_t> readers = {oracle.plural_neuron, oracle.singular_neuron};
    bool pass = outputs.neuron_layer == oracle.reader_layer &&
                outputs.neuron_dlda.size() > std::max(readers[0], readers[1]);
    double margin = 0.0;
    std::string detail = "neuron layer " + std::to_string(outputs.neuron_layer);
    if (pass) {
      const auto ranked = rank_by_magnitude(outputs.neuron_dlda);
      for (std::size_t rd : readers)
        pass = pass && std::find(ranked.begin(), ranked.begin() + 2, rd) != ranked.begin() + 2;
      double weakest_reader = std::numeric_limits<double>::infinity();
      double strongest_other = 0.0;
      for (std::size_t n = 0; n < outputs.neuron_dlda.size(); ++n) {
        const double v = std::abs(outputs.neuron_dlda[n]);
        if (n == readers[0] || n == readers[1])
          weakest_reader = std::min(weakest_reader, v);
        else
          strongest_other = std::max(strongest_other, v);
      }
      margin = strongest_other > 0.0 ? weakest_reader / strongest_other
                                     : std::numeric_limits<double>::infinity();
      detail += ", top-2 by |DLDA|: " + std::to_string(ranked[0]) + ", " + std::to_string(ranked[1]);
    }
    report.criteria.push_back({"reader_neurons", pass, margin, 1.0, detail});
  }
  {
    const double cos = outputs.pc1->vector.size() == oracle.direction.size()
                           ? std::abs(cosine(outputs.pc1->vector, oracle.direction))
                           : 0.0;
    report.criteria.push_back(
        {"direction_recovery", cos >= kOracleCosine, cos, kOracleCosine, "|cos(PC1, d)|"});
  }
  report.criteria.push_back({"steering_flip_rate", outputs.steering_flip_rate >= kOracleFlipRate,
                             outputs.steering_flip_rate, kOracleFlipRate,
                             "fraction of examples whose predicted number flipped"});
  report.all_pass = std::all_of(report.criteria.begin(), report.criteria.end(),
                                [](const OracleCriterion& c) { return c.pass; });
  return report;
}

}  // namespace circuit_lens
