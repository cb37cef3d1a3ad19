#pragma once

// JSON forms of every artifact. nlohmann::json keeps object keys sorted, and
// doubles are printed with round-trip precision, so equal values always
// serialize to equal bytes.

#include "circuit_lens/attribution.hpp"
#include "circuit_lens/directions.hpp"
#include "circuit_lens/error.hpp"
#include "circuit_lens/grammar.hpp"
#include "circuit_lens/model.hpp"
#include "circuit_lens/patching.hpp"
#include "circuit_lens/pca.hpp"
#include "circuit_lens/planted.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace circuit_lens::io {

using nlohmann::json;

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

namespace detail {

/// Field lookup that names the offending key on failure.
template <class T>
T field(const json& j, const char* key, const std::string& where) {
  require(j.is_object() && j.contains(key), ErrorCode::malformed_input,
          where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::malformed_input, where + ": field '" + key + "': " + e.what());
  }
}

inline void only_fields(const json& j, std::initializer_list<const char*> allowed,
                        const std::string& where) {
  require(j.is_object(), ErrorCode::malformed_input, where + ": expected a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    require(ok.count(k) > 0, ErrorCode::malformed_input, where + ": unknown field '" + k + "'");
}

}  // namespace detail

inline json parse_json(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::malformed_input, where + ": " + e.what());
  }
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io_error, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json(ss.str(), path.string());
}

inline json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Vector vector_from_json(const json& j, const std::string& where) {
  std::vector<double> v;
  try {
    v = j.get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::malformed_input, where + ": expected a list of numbers");
  }
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Matrix matrix_from_json(const json& j, const std::string& where) {
  require(j.is_array(), ErrorCode::malformed_input, where + ": expected a list of rows");
  Matrix m;
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Vector row = vector_from_json(j[r], where);
    if (r == 0) m.resize(static_cast<Eigen::Index>(j.size()), row.size());
    require(row.size() == m.cols(), ErrorCode::malformed_input, where + ": ragged rows");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

// Model config ---------------------------------------------------------------

inline std::string to_string(Activation a) {
  return a == Activation::gelu_tanh_approx ? "gelu_tanh_approx" : "identity";
}
inline std::string to_string(EmbedScale e) { return e == EmbedScale::sqrt_d_model ? "sqrt_d_model" : "none"; }
inline std::string to_string(NormOffset n) {
  return n == NormOffset::plain_gamma ? "plain_gamma" : "one_plus_gamma";
}

inline json to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"d_model", c.d_model},
          {"d_head", c.d_head},
          {"d_mlp", c.d_mlp},
          {"vocab_size", c.vocab_size},
          {"max_seq", c.max_seq},
          {"rope_base", c.rope_base ? json(*c.rope_base) : json(nullptr)},
          {"norm_eps", c.norm_eps},
          {"activation", to_string(c.activation)},
          {"embed_scale", to_string(c.embed_scale)},
          {"norm_offset", to_string(c.norm_offset)},
          {"tied_embeddings", c.tied_embeddings}};
}

inline ModelConfig model_config_from_json(const json& j) {
  const std::string w = "config";
  detail::only_fields(j,
                      {"n_layers", "n_heads", "d_model", "d_head", "d_mlp", "vocab_size", "max_seq",
                       "rope_base", "norm_eps", "activation", "embed_scale", "norm_offset",
                       "tied_embeddings"},
                      w);
  ModelConfig c;
  c.n_layers = detail::field<std::size_t>(j, "n_layers", w);
  c.n_heads = detail::field<std::size_t>(j, "n_heads", w);
  c.d_model = detail::field<std::size_t>(j, "d_model", w);
  c.d_head = detail::field<std::size_t>(j, "d_head", w);
  c.d_mlp = detail::field<std::size_t>(j, "d_mlp", w);
  c.vocab_size = detail::field<std::size_t>(j, "vocab_size", w);
  c.max_seq = detail::field<std::size_t>(j, "max_seq", w);
  if (j.contains("rope_base") && !j["rope_base"].is_null())
    c.rope_base = detail::field<double>(j, "rope_base", w);
  c.norm_eps = detail::field<double>(j, "norm_eps", w);
  const auto act = detail::field<std::string>(j, "activation", w);
  require(act == "gelu_tanh_approx" || act == "identity", ErrorCode::malformed_input,
          "config: unknown activation '" + act + "'");
  c.activation = act == "identity" ? Activation::identity : Activation::gelu_tanh_approx;
  const auto es = detail::field<std::string>(j, "embed_scale", w);
  require(es == "sqrt_d_model" || es == "none", ErrorCode::malformed_input,
          "config: unknown embed_scale '" + es + "'");
  c.embed_scale = es == "none" ? EmbedScale::none : EmbedScale::sqrt_d_model;
  const auto no = detail::field<std::string>(j, "norm_offset", w);
  require(no == "plain_gamma" || no == "one_plus_gamma", ErrorCode::malformed_input,
          "config: unknown norm_offset '" + no + "'");
  c.norm_offset = no == "plain_gamma" ? NormOffset::plain_gamma : NormOffset::one_plus_gamma;
  c.tied_embeddings = detail::field<bool>(j, "tied_embeddings", w);
  return c;
}

// Grammar --------------------------------------------------------------------

inline json to_json(const NumberPair& p) { return {{"sing", p.sing}, {"plur", p.plur}}; }

inline NumberPair number_pair_from_json(const json& j, const std::string& w) {
  detail::only_fields(j, {"sing", "plur"}, w);
  return {detail::field<std::string>(j, "sing", w), detail::field<std::string>(j, "plur", w)};
}

inline json to_json(const LanguageSpec& s) {
  json subjects = json::array(), verbs = json::array();
  for (const auto& p : s.subject_nouns) subjects.push_back(to_json(p));
  for (const auto& p : s.embedded_verbs) verbs.push_back(to_json(p));
  return {{"name", s.name},
          {"vocab", s.vocab},
          {"determiners", to_json(s.determiners)},
          {"subject_nouns", subjects},
          {"object_determiner", s.object_determiner},
          {"object_nouns", s.object_nouns},
          {"relativizer", s.relativizer},
          {"embedded_verbs", verbs},
          {"answer_verbs", to_json(s.answer_verbs)},
          {"marks_embedded_verb", s.marks_embedded_verb},
          {"marks_determiner", s.marks_determiner}};
}

inline LanguageSpec language_spec_from_json(const json& j) {
  const std::string w = "language spec";
  detail::only_fields(j,
                      {"name", "vocab", "determiners", "subject_nouns", "object_determiner",
                       "object_nouns", "relativizer", "embedded_verbs", "answer_verbs",
                       "marks_embedded_verb", "marks_determiner"},
                      w);
  LanguageSpec s;
  s.name = detail::field<std::string>(j, "name", w);
  s.vocab = detail::field<std::map<std::string, TokenId>>(j, "vocab", w);
  s.determiners = number_pair_from_json(j.at("determiners"), w + ".determiners");
  for (const auto& p : detail::field<json>(j, "subject_nouns", w))
    s.subject_nouns.push_back(number_pair_from_json(p, w + ".subject_nouns"));
  s.object_determiner = detail::field<std::string>(j, "object_determiner", w);
  s.object_nouns = detail::field<std::vector<std::string>>(j, "object_nouns", w);
  s.relativizer = detail::field<std::string>(j, "relativizer", w);
  for (const auto& p : detail::field<json>(j, "embedded_verbs", w))
    s.embedded_verbs.push_back(number_pair_from_json(p, w + ".embedded_verbs"));
  s.answer_verbs = number_pair_from_json(j.at("answer_verbs"), w + ".answer_verbs");
  s.marks_embedded_verb = detail::field<bool>(j, "marks_embedded_verb", w);
  s.marks_determiner = detail::field<bool>(j, "marks_determiner", w);
  validate(s);
  return s;
}

inline json to_json(const ContrastivePair& p) {
  return {{"clean_ids", p.clean},
          {"corrupted_ids", p.corrupted},
          {"g", p.g},
          {"b", p.b},
          {"subject_number", to_string(p.subject_number_clean)},
          {"subject_position", p.subject_position},
          {"token_labels", p.token_labels}};
}

inline ContrastivePair pair_from_json(const json& j, const std::string& w) {
  detail::only_fields(j,
                      {"clean_ids", "corrupted_ids", "g", "b", "subject_number", "subject_position",
                       "token_labels"},
                      w);
  ContrastivePair p;
  p.clean = detail::field<TokenSequence>(j, "clean_ids", w);
  p.corrupted = detail::field<TokenSequence>(j, "corrupted_ids", w);
  p.g = detail::field<TokenId>(j, "g", w);
  p.b = detail::field<TokenId>(j, "b", w);
  p.subject_number_clean = number_from_string(detail::field<std::string>(j, "subject_number", w));
  p.subject_position = j.contains("subject_position")
                           ? detail::field<std::size_t>(j, "subject_position", w)
                           : kSubjectSlot;
  p.token_labels = j.contains("token_labels")
                       ? detail::field<std::vector<std::string>>(j, "token_labels", w)
                       : std::vector<std::string>{};
  return p;
}

inline std::string to_jsonl(std::span<const ContrastivePair> pairs) {
  std::string out;
  for (const auto& p : pairs) out += to_json(p).dump() + "\n";
  return out;
}

inline std::vector<ContrastivePair> pairs_from_jsonl(const std::string& text,
                                                     const std::string& where) {
  std::vector<ContrastivePair> pairs;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string w = where + ":" + std::to_string(lineno);
    pairs.push_back(pair_from_json(parse_json(line, w), w));
  }
  return pairs;
}

// Analysis results -----------------------------------------------------------

inline json to_json(const PatchGrid& g) {
  return {{"family", to_string(g.family)},
          {"row_labels", g.row_labels},
          {"col_labels", g.col_labels},
          {"values_raw", to_json(g.values_raw)},
          {"values_delta", to_json(g.values_delta)},
          {"values_normalized", to_json(g.values_normalized)},
          {"baselines", {{"mean_clean_ld", g.mean_clean_ld}, {"mean_corrupted_ld", g.mean_corrupted_ld}}}};
}

inline PatchGrid patch_grid_from_json(const json& j) {
  const std::string w = "patch grid";
  PatchGrid g;
  g.family = patch_family_from_string(detail::field<std::string>(j, "family", w));
  g.row_labels = detail::field<std::vector<std::string>>(j, "row_labels", w);
  g.col_labels = detail::field<std::vector<std::string>>(j, "col_labels", w);
  g.values_raw = matrix_from_json(detail::field<json>(j, "values_raw", w), w);
  g.values_delta = matrix_from_json(detail::field<json>(j, "values_delta", w), w);
  g.values_normalized = matrix_from_json(detail::field<json>(j, "values_normalized", w), w);
  const auto b = detail::field<json>(j, "baselines", w);
  g.mean_clean_ld = detail::field<double>(b, "mean_clean_ld", w);
  g.mean_corrupted_ld = detail::field<double>(b, "mean_corrupted_ld", w);
  return g;
}

inline json to_json(const AttributionReport& r) {
  json j = {{"frozen_norm", r.frozen_norm},
            {"n_pairs", r.n_pairs},
            {"embedding", r.embedding},
            {"attn", r.attn},
            {"mlp", r.mlp},
            {"heads", r.heads},
            {"mean_logit_diff", r.mean_logit_diff}};
  if (r.neuron_layer) {
    j["neuron_layer"] = *r.neuron_layer;
    j["neurons"] = r.neurons;
  }
  return j;
}

inline std::string token_string(TokenId t, const std::vector<std::string>* vocab) {
  if (vocab && t >= 0 && static_cast<std::size_t>(t) < vocab->size()) return (*vocab)[static_cast<std::size_t>(t)];
  return "<" + std::to_string(t) + ">";
}

inline json to_json(std::span<const TokenScore> tokens, const std::vector<std::string>* vocab) {
  json out = json::array();
  for (const auto& t : tokens)
    out.push_back({{"token", t.token}, {"token_string", token_string(t.token, vocab)}, {"score", t.score}});
  return out;
}

inline json to_json(const Direction& d) {
  return {{"vector", to_json(d.vector)},
          {"source", {{"layer", d.layer}, {"head", d.head}, {"fit_dataset", d.fit_dataset}}},
          {"explained_variance_ratio", d.explained_variance_ratio},
          {"sign_convention", d.sign_convention}};
}

inline Direction direction_from_json(const json& j) {
  const std::string w = "direction";
  Direction d;
  d.vector = vector_from_json(detail::field<json>(j, "vector", w), w + ".vector");
  const auto src = detail::field<json>(j, "source", w);
  d.layer = detail::field<std::size_t>(src, "layer", w + ".source");
  d.head = detail::field<std::size_t>(src, "head", w + ".source");
  d.fit_dataset = detail::field<std::string>(src, "fit_dataset", w + ".source");
  d.explained_variance_ratio = detail::field<double>(j, "explained_variance_ratio", w);
  d.sign_convention = detail::field<std::string>(j, "sign_convention", w);
  return d;
}

inline json to_json(std::span<const PrincipalComponent> pcs) {
  json out = json::array();
  for (const auto& pc : pcs)
    out.push_back({{"direction", to_json(pc.direction)},
                   {"variance", pc.variance},
                   {"explained_variance_ratio", pc.explained_variance_ratio}});
  return out;
}

inline json to_json(const SteerGroup& g) {
  return {{"n", g.n}, {"mean_pre_ld", g.mean_pre_ld}, {"mean_post_ld", g.mean_post_ld}, {"flip_rate", g.flip_rate}};
}

inline json to_json(const SteerReport& r) {
  json pairs = json::array();
  for (const auto& p : r.pairs)
    pairs.push_back({{"pre_ld", p.pre_ld},
                     {"post_ld", p.post_ld},
                     {"flipped", p.flipped},
                     {"subject_number", to_string(p.subject_number)}});
  return {{"alpha", r.alpha},
          {"mode", r.mode},
          {"layer", r.layer},
          {"head", r.head},
          {"pairs", pairs},
          {"groups", {{"sing", to_json(r.sing)}, {"plur", to_json(r.plur)}}},
          {"flip_rate", r.flip_rate}};
}

inline json to_json(const AlphaSweep& s) {
  return {{"grid", s.grid},
          {"flip_rates", s.flip_rates},
          {"chosen_alpha", s.chosen_alpha},
          {"chosen_flip_rate", s.chosen_flip_rate}};
}

inline json to_json(const CompositionResult& c) {
  std::vector<std::string> labels;
  for (auto n : c.labels) labels.push_back(to_string(n));
  return {{"dots", c.dots}, {"labels", labels}, {"mean_sing", c.mean_sing}, {"mean_plur", c.mean_plur}};
}

// Planted oracle -------------------------------------------------------------

inline json to_json(const PlantedOracle& o) {
  return {{"model_id", o.model_id},
          {"copy_head", {{"layer", o.copy_layer}, {"head", o.copy_head}}},
          {"direction", to_json(o.direction)},
          {"reader_layer", o.reader_layer},
          {"reader_neurons", {{"plural", o.plural_neuron}, {"singular", o.singular_neuron}}},
          {"one_sided_neuron", o.one_sided_neuron ? json(*o.one_sided_neuron) : json(nullptr)},
          {"expected_promoted",
           {{"plural_neuron_positive", o.plural_answers},
            {"singular_neuron_positive", o.singular_answers},
            {"one_sided_neuron_negative", o.foreign_plurals}}},
          {"subject_position", o.subject_position},
          {"write_scale", o.write_scale}};
}

inline PlantedOracle planted_oracle_from_json(const json& j) {
  const std::string w = "oracle";
  PlantedOracle o;
  o.model_id = detail::field<std::string>(j, "model_id", w);
  const auto ch = detail::field<json>(j, "copy_head", w);
  o.copy_layer = detail::field<std::size_t>(ch, "layer", w);
  o.copy_head = detail::field<std::size_t>(ch, "head", w);
  o.direction = vector_from_json(detail::field<json>(j, "direction", w), w);
  o.reader_layer = detail::field<std::size_t>(j, "reader_layer", w);
  const auto rn = detail::field<json>(j, "reader_neurons", w);
  o.plural_neuron = detail::field<std::size_t>(rn, "plural", w);
  o.singular_neuron = detail::field<std::size_t>(rn, "singular", w);
  if (j.contains("one_sided_neuron") && !j["one_sided_neuron"].is_null())
    o.one_sided_neuron = detail::field<std::size_t>(j, "one_sided_neuron", w);
  const auto ep = detail::field<json>(j, "expected_promoted", w);
  o.plural_answers = detail::field<std::vector<TokenId>>(ep, "plural_neuron_positive", w);
  o.singular_answers = detail::field<std::vector<TokenId>>(ep, "singular_neuron_positive", w);
  o.foreign_plurals = detail::field<std::vector<TokenId>>(ep, "one_sided_neuron_negative", w);
  o.subject_position = detail::field<std::size_t>(j, "subject_position", w);
  o.write_scale = detail::field<double>(j, "write_scale", w);
  return o;
}

inline json to_json(const OracleReport& r) {
  json crit = json::array();
  for (const auto& c : r.criteria) {
    crit.push_back({{"name", c.name},
                    {"pass", c.pass},
                    {"measured", std::isfinite(c.measured) ? json(c.measured) : json("inf")},
                    {"threshold", c.threshold},
                    {"detail", c.detail}});
  }
  return {{"criteria", crit}, {"all_pass", r.all_pass}};
}

inline json error_json(const std::string& code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

}  // namespace circuit_lens::io
