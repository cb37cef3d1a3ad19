// circuit_lens command-line driver. Every subcommand writes JSON artifacts
// plus a run.json (argv, seed, model config, input and artifact hashes) into
// its --out directory.

#include "circuit_lens/circuit_lens.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace circuit_lens;
using io::json;

namespace {

constexpr const char* kRunFile = "run.json";

// Artifacts and inputs of one invocation, flushed together with run.json.
class Run {
 public:
  Run(std::string command, std::vector<std::string> argv) : command_(std::move(command)), argv_(std::move(argv)) {}

  void set_out(const fs::path& out) { out_ = out; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }
  void set_config(const ModelConfig& c) { config_ = io::to_json(c); }

  void input(const fs::path& path) { inputs_[path.generic_string()] = io::sha256_file(path); }
  void input_bytes(const fs::path& path, const std::string& bytes) {
    inputs_[path.generic_string()] = io::sha256_hex(bytes);
  }

  void artifact(const std::string& name, const std::string& bytes) {
    io::write_file(out_ / name, bytes);
    artifacts_[name] = io::sha256_hex(bytes);
  }
  void artifact(const std::string& name, const json& j) { artifact(name, io::dump(j)); }

  void finish() const {
    json j = {{"command", command_},
              {"argv", argv_},
              {"seed", seed_ ? json(*seed_) : json(nullptr)},
              {"config", config_},
              {"inputs", inputs_},
              {"artifacts", artifacts_}};
    io::write_file(out_ / kRunFile, io::dump(j));
  }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  fs::path out_;
  std::optional<std::uint64_t> seed_;
  json config_ = nullptr;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> artifacts_;
};

struct Options {
  std::string model, dataset, out, family = "head_out_last_pos", language = "english", split = "train";
  std::string direction, direction_b, alpha_from, oracle, head_grid, neurons_file, steer_file;
  std::string sign, which = "W_in", view = "normalized", dtype = "f64", activation = "gelu_tanh_approx";
  std::string language_file, from_grid, grid = "0,0.5,1,2,3,4,6,8,12,16,24,32";
  std::vector<std::string> formats = {"json"};
  std::uint64_t seed = 0;
  std::optional<std::size_t> layer, head, neuron, neuron_layer;
  std::optional<double> alpha, noise_std;
  double write_scale = 4.0;
  std::size_t k = 10, pca_k = 2, steer_k = 0, n = 200;
  bool raw_norm = false, no_gamma = false, no_one_sided = false;
  std::string run_file;
};

bool wants(const Options& o, const std::string& fmt) {
  return std::find(o.formats.begin(), o.formats.end(), fmt) != o.formats.end();
}

template <class T>
T need(const std::optional<T>& v, const char* flag) {
  require(v.has_value(), ErrorCode::invalid_argument, std::string("missing required flag ") + flag);
  return *v;
}

void need(const std::string& v, const char* flag) {
  require(!v.empty(), ErrorCode::invalid_argument, std::string("missing required flag ") + flag);
}

io::LoadedModel load_model(const Options& o, Run& run) {
  need(o.model, "--model");
  auto m = io::load_model(o.model);
  for (const char* f : {io::kConfigFile, io::kManifestFile, io::kBlobFile}) run.input(fs::path(o.model) / f);
  run.set_config(m.config);
  return m;
}

std::vector<ContrastivePair> load_dataset(const std::string& path, const ModelConfig& config, Run& run) {
  need(path, "--dataset");
  const std::string text = io::read_file(path);
  run.input_bytes(path, text);
  auto pairs = io::pairs_from_jsonl(text, path);
  require(!pairs.empty(), ErrorCode::invalid_argument, path + " contains no pairs");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    const std::string where = path + " pair " + std::to_string(i);
    require(p.clean.size() == p.corrupted.size() && p.clean.size() == pairs.front().clean.size(),
            ErrorCode::incompatible_shapes, where + ": sequence lengths differ");
    require(p.clean.size() <= config.max_seq, ErrorCode::incompatible_shapes,
            where + ": longer than the model's max_seq");
    const auto in_vocab = [&](TokenId t) { return t >= 0 && static_cast<std::size_t>(t) < config.vocab_size; };
    const bool ok = std::all_of(p.clean.begin(), p.clean.end(), in_vocab) &&
                    std::all_of(p.corrupted.begin(), p.corrupted.end(), in_vocab) && in_vocab(p.g) &&
                    in_vocab(p.b);
    require(ok, ErrorCode::incompatible_shapes, where + ": token id outside the model vocabulary");
  }
  return pairs;
}

json read_input_json(const std::string& path, Run& run) {
  const std::string text = io::read_file(path);
  run.input_bytes(path, text);
  return io::parse_json(text, path);
}

std::string dataset_id(const std::string& path) { return "sha256:" + io::sha256_file(path); }

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      require(used == item.size(), ErrorCode::invalid_argument, "bad alpha grid entry '" + item + "'");
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::invalid_argument, "bad alpha grid entry '" + item + "'");
    }
  }
  return out;
}

const LanguageSpec& builtin_language(const ToyLexicon& lex, const std::string& name) {
  return lex.language(name);
}

// Subcommands --------------------------------------------------------------

void cmd_gen_data(const Options& o, Run& run) {
  const ToyLexicon lex = toy_lexicon();
  LanguageSpec spec;
  if (!o.language_file.empty()) {
    spec = io::language_spec_from_json(read_input_json(o.language_file, run));
  } else {
    spec = builtin_language(lex, o.language);
  }
  run.set_seed(o.seed);
  const Dataset ds = generate_dataset(spec, o.n, o.seed, split_from_string(o.split));
  for (const auto& p : ds.pairs) {
    const auto report = validate_alignment(p, &spec);
    require(report.ok, ErrorCode::template_mismatch,
            "generated pair failed alignment: " + (report.issues.empty() ? std::string() : report.issues[0].message));
  }
  run.artifact("dataset.jsonl", io::to_jsonl(ds.pairs));
  run.artifact("language.json", io::to_json(spec));
}

void cmd_plant(const Options& o, Run& run) {
  PlantedCircuitSpec spec;
  spec.seed = o.seed;
  spec.write_scale = o.write_scale;
  spec.noise_std = o.noise_std.value_or(0.02 * o.write_scale);
  spec.one_sided_neuron = !o.no_one_sided;
  require(o.activation == "gelu_tanh_approx" || o.activation == "identity", ErrorCode::invalid_argument,
          "--activation must be gelu_tanh_approx or identity");
  spec.config.activation = o.activation == "identity" ? Activation::identity : Activation::gelu_tanh_approx;
  require(o.dtype == "f64" || o.dtype == "f32", ErrorCode::invalid_argument, "--dtype must be f64 or f32");
  run.set_seed(o.seed);

  PlantedModel pm = build_planted_model(spec);
  run.set_config(pm.config);
  // save_model writes the files; re-registering them records their hashes.
  io::save_model(o.out, pm.weights, pm.config, o.dtype == "f32" ? io::DType::f32 : io::DType::f64,
                 &pm.lexicon.words);
  for (const char* f : {io::kConfigFile, io::kManifestFile, io::kBlobFile, io::kVocabFile})
    run.artifact(f, io::read_file(fs::path(o.out) / f));
  pm.oracle.model_id = io::model_id(o.out);
  json oracle = io::to_json(pm.oracle);
  oracle["spec"] = {{"seed", spec.seed},
                    {"write_scale", spec.write_scale},
                    {"noise_std", spec.noise_std},
                    {"one_sided_neuron", spec.one_sided_neuron},
                    {"activation", io::to_string(spec.config.activation)}};
  run.artifact("oracle.json", oracle);
  run.artifact("english.json", io::to_json(pm.lexicon.english));
  run.artifact("spanish.json", io::to_json(pm.lexicon.spanish));
}

void cmd_patch(const Options& o, Run& run) {
  const auto m = load_model(o, run);
  const auto pairs = load_dataset(o.dataset, m.config, run);
  const auto grid = compute_grid(m.weights, m.config, pairs, patch_family_from_string(o.family));
  json j = io::to_json(grid);
  j["model_id"] = m.model_id;
  j["n_pairs"] = pairs.size();
  run.artifact("grid.json", j);
  if (wants(o, "csv")) run.artifact("grid.csv", io::grid_csv(grid));
  if (wants(o, "svg")) {
    io::GridView view = io::GridView::normalized;
    if (o.view == "raw") view = io::GridView::raw;
    else if (o.view == "delta") view = io::GridView::delta;
    else require(o.view == "normalized", ErrorCode::invalid_argument, "--view must be raw, delta or normalized");
    run.artifact("grid.svg", io::heatmap_svg(grid, view));
  }
}

void cmd_dlda(const Options& o, Run& run) {
  const auto m = load_model(o, run);
  const auto pairs = load_dataset(o.dataset, m.config, run);
  const auto report = attribution_report(m.weights, m.config, pairs, o.layer, !o.raw_norm);
  json j = io::to_json(report);
  j["model_id"] = m.model_id;
  run.artifact("attribution.json", j);
  if (wants(o, "csv")) {
    std::vector<std::string> keys = {"embedding"};
    std::vector<double> vals = {report.embedding};
    for (std::size_t l = 0; l < m.config.n_layers; ++l) {
      keys.push_back("L" + std::to_string(l) + ".attn");
      vals.push_back(report.attn[l]);
      for (std::size_t h = 0; h < m.config.n_heads; ++h) {
        keys.push_back("L" + std::to_string(l) + "H" + std::to_string(h));
        vals.push_back(report.heads[l][h]);
      }
      keys.push_back("L" + std::to_string(l) + ".mlp");
      vals.push_back(report.mlp[l]);
    }
    run.artifact("attribution.csv", io::table_csv("component", "dlda", keys, vals));
  }
}

void cmd_neurons(const Options& o, Run& run) {
  const auto m = load_model(o, run);
  const auto pairs = load_dataset(o.dataset, m.config, run);
  const std::size_t layer = need(o.layer, "--layer");
  const auto report = attribution_report(m.weights, m.config, pairs, layer, !o.raw_norm);
  const auto ranked = rank_by_magnitude(report.neurons);
  json top = json::array();
  for (std::size_t i = 0; i < std::min(o.k, ranked.size()); ++i)
    top.push_back({{"neuron", ranked[i]}, {"dlda", report.neurons[ranked[i]]}});
  run.artifact("neurons.json", json{{"model_id", m.model_id},
                                    {"layer", layer},
                                    {"frozen_norm", !o.raw_norm},
                                    {"n_pairs", pairs.size()},
                                    {"neuron_dlda", report.neurons},
                                    {"mlp_dlda", report.mlp[layer]},
                                    {"top", top}});
  if (wants(o, "csv")) {
    std::vector<std::string> keys;
    for (std::size_t n = 0; n < report.neurons.size(); ++n) keys.push_back(std::to_string(n));
    run.artifact("neurons.csv", io::table_csv("neuron", "dlda", keys, report.neurons));
  }
}

void cmd_tokens(const Options& o, Run& run) {
  const auto m = load_model(o, run);
  const std::size_t layer = need(o.layer, "--layer");
  const std::size_t neuron = need(o.neuron, "--neuron");
  const std::string sign = o.sign.empty() ? "positive" : o.sign;
  require(sign == "positive" || sign == "negative", ErrorCode::invalid_argument,
          "--sign must be positive or negative for tokens");
  const auto toks = promoted_tokens(m.weights, m.config, layer, neuron,
                                    sign == "positive" ? PromoteSign::positive : PromoteSign::negative, o.k,
                                    !o.no_gamma);
  run.artifact("tokens.json", json{{"model_id", m.model_id},
                                   {"layer", layer},
                                   {"neuron", neuron},
                                   {"sign", sign},
                                   {"apply_gamma", !o.no_gamma},
                                   {"tokens", io::to_json(toks, m.vocab ? &*m.vocab : nullptr)}});
}

std::pair<std::size_t, std::size_t> head_from(const Options& o, Run& run) {
  if (!o.from_grid.empty()) {
    const auto grid = io::patch_grid_from_json(read_input_json(o.from_grid, run));
    require(grid.family == PatchFamily::head_out_last_pos, ErrorCode::invalid_argument,
            "--from-grid needs a head_out_last_pos grid");
    return argmax_cell(grid.values_delta);
  }
  return {need(o.layer, "--layer"), need(o.head, "--head")};
}

void cmd_pca(const Options& o, Run& run) {
  const auto m = load_model(o, run);
  const auto pairs = load_dataset(o.dataset, m.config, run);
  const auto [layer, head] = head_from(o, run);
  const auto samples = collect_head_outputs(m.weights, m.config, pairs, layer, head);
  std::vector<PrincipalComponent> pcs;
  const Direction dir = fit_direction(samples, dataset_id(o.dataset), &pcs,
                                      std::min<std::size_t>(o.pca_k, m.config.d_model));
  json dj = io::to_json(dir);
  dj["model_id"] = m.model_id;
  run.artifact("direction.json", dj);
  std::vector<std::string> labels;
  for (auto n : samples.labels) labels.push_back(to_string(n));
  run.artifact("pca.json", json{{"model_id", m.model_id},
                                {"layer", layer},
                                {"head", head},
                                {"components", io::to_json(std::span<const PrincipalComponent>(pcs))},
                                {"projections", project(samples.outputs, dir.vector)},
                                {"labels", labels}});
}

void cmd_compose(const Options& o, Run& run) {
  const auto m = load_model(o, run);
  const auto pairs = load_dataset(o.dataset, m.config, run);
  const auto [layer, head] = head_from(o, run);
  const std::size_t nl = need(o.neuron_layer, "--neuron-layer");
  const std::size_t neuron = need(o.neuron, "--neuron");
  require(o.which == "W_in" || o.which == "W_gate", ErrorCode::invalid_argument, "--which must be W_in or W_gate");
  const auto samples = collect_head_outputs(m.weights, m.config, pairs, layer, head);
  const auto res = neuron_composition(samples, m.weights, m.config, nl, neuron,
                                      o.which == "W_in" ? NeuronInput::W_in : NeuronInput::W_gate);
  json j = io::to_json(res);
  j["model_id"] = m.model_id;
  j["head"] = {{"layer", layer}, {"head", head}};
  j["neuron"] = {{"layer", nl}, {"index", neuron}, {"which", o.which}};
  run.artifact("compose.json", j);
}

Direction load_direction(const std::string& path, Run& run) {
  need(path, "--direction");
  return io::direction_from_json(read_input_json(path, run));
}

void cmd_steer(const Options& o, Run& run) {
  const auto m = load_model(o, run);
  const auto pairs = load_dataset(o.dataset, m.config, run);
  const Direction dir = load_direction(o.direction, run);
  double alpha = 0.0;
  if (!o.alpha_from.empty()) {
    require(!o.alpha, ErrorCode::invalid_argument, "give either --alpha or --alpha-from");
    alpha = io::detail::field<double>(read_input_json(o.alpha_from, run), "chosen_alpha", o.alpha_from);
  } else {
    alpha = need(o.alpha, "--alpha");
  }
  const std::size_t layer = o.layer.value_or(dir.layer);
  const std::size_t head = o.head.value_or(dir.head);
  const std::string mode = o.sign.empty() ? "flip" : o.sign;
  SteerReport report;
  if (mode == "flip") {
    report = steer_toward_opposite(m.weights, m.config, pairs, dir, alpha, layer, head);
  } else {
    require(mode == "plus" || mode == "minus", ErrorCode::invalid_argument, "--sign must be plus, minus or flip");
    report = steer(m.weights, m.config, pairs,
                   SteeringSpec{dir, alpha, mode == "plus" ? SteerSign::plus : SteerSign::minus, layer, head});
  }
  json j = io::to_json(report);
  j["model_id"] = m.model_id;
  j["direction_fit_dataset"] = dir.fit_dataset;
  if (o.steer_k > 0 && m.vocab) {
    // Top predicted tokens before and after steering for the first sentences.
    json examples = json::array();
    const std::size_t shown = std::min<std::size_t>(pairs.size(), 4);
    for (std::size_t i = 0; i < shown; ++i) {
      const auto& p = pairs[i];
      const double signed_alpha = mode == "minus" || (mode == "flip" && p.subject_number_clean == Number::plur)
                                      ? -alpha
                                      : alpha;
      const auto pre = forward(m.weights, m.config, p.clean);
      const auto iv = Intervention::add(HookPoint::head_out(layer, head, p.clean.size() - 1), signed_alpha * dir.vector);
      const auto post = forward(m.weights, m.config, p.clean, {iv});
      const auto last = static_cast<Eigen::Index>(p.clean.size() - 1);
      std::string sentence;
      for (TokenId t : p.clean) sentence += (sentence.empty() ? "" : " ") + io::token_string(t, &*m.vocab);
      examples.push_back({{"sentence", sentence},
                          {"pre", io::to_json(top_k_tokens(pre.logits.row(last), o.steer_k), &*m.vocab)},
                          {"post", io::to_json(top_k_tokens(post.logits.row(last), o.steer_k), &*m.vocab)}});
    }
    j["top_tokens"] = examples;
  }
  run.artifact("steer.json", j);
}

void cmd_sweep_alpha(const Options& o, Run& run) {
  const auto m = load_model(o, run);
  const auto pairs = load_dataset(o.dataset, m.config, run);
  const Direction dir = load_direction(o.direction, run);
  const auto grid = parse_grid(o.grid);
  const auto sweep = alpha_sweep(m.weights, m.config, pairs, dir, o.layer.value_or(dir.layer),
                                 o.head.value_or(dir.head), grid);
  json j = io::to_json(sweep);
  j["model_id"] = m.model_id;
  run.artifact("sweep.json", j);
}

std::string artifact_model_id(const json& j, const std::string& path) {
  return io::detail::field<std::string>(j, "model_id", path);
}

void cmd_oracle_check(const Options& o, Run& run) {
  need(o.oracle, "--oracle");
  need(o.head_grid, "--head-grid");
  need(o.neurons_file, "--neurons");
  need(o.steer_file, "--steer");
  const PlantedOracle oracle = io::planted_oracle_from_json(read_input_json(o.oracle, run));
  const json grid_j = read_input_json(o.head_grid, run);
  const json neurons_j = read_input_json(o.neurons_file, run);
  const json steer_j = read_input_json(o.steer_file, run);
  const json dir_j = read_input_json(o.direction, run);

  for (const auto& [j, path] : {std::pair{&grid_j, o.head_grid}, {&neurons_j, o.neurons_file},
                                {&steer_j, o.steer_file}, {&dir_j, o.direction}}) {
    const std::string id = artifact_model_id(*j, path);
    require(id == oracle.model_id, ErrorCode::model_mismatch,
            path + " was computed on model " + id + ", the oracle describes " + oracle.model_id);
  }
  const PatchGrid grid = io::patch_grid_from_json(grid_j);
  const Direction dir = io::direction_from_json(dir_j);
  AnalysisOutputs outputs;
  outputs.model_id = oracle.model_id;
  outputs.head_grid = &grid;
  outputs.neuron_layer = io::detail::field<std::size_t>(neurons_j, "layer", o.neurons_file);
  outputs.neuron_dlda = io::detail::field<std::vector<double>>(neurons_j, "neuron_dlda", o.neurons_file);
  outputs.pc1 = &dir;
  // Steering must flip both subject numbers, so the weaker group counts.
  const json groups = io::detail::field<json>(steer_j, "groups", o.steer_file);
  outputs.steering_flip_rate = std::min(io::detail::field<double>(groups.at("sing"), "flip_rate", o.steer_file),
                                        io::detail::field<double>(groups.at("plur"), "flip_rate", o.steer_file));
  const OracleReport report = oracle_check(oracle, outputs);
  json j = io::to_json(report);
  j["model_id"] = oracle.model_id;
  if (!o.direction_b.empty()) {
    const json b = read_input_json(o.direction_b, run);
    require(artifact_model_id(b, o.direction_b) == oracle.model_id, ErrorCode::model_mismatch,
            o.direction_b + " was computed on a different model");
    const Direction db = io::direction_from_json(b);
    j["cross_language_pc1_cosine"] = std::abs(cosine(dir.vector, db.vector));
    j["direction_b_cosine_to_planted"] = std::abs(cosine(db.vector, oracle.direction));
  }
  run.artifact("oracle_check.json", j);
}

// Parsing ------------------------------------------------------------------

int run_cli(const std::vector<std::string>& args);

int cmd_replay(const Options& o) {
  need(o.run_file, "--run");
  const json rec = io::read_json(o.run_file);
  auto argv = io::detail::field<std::vector<std::string>>(rec, "argv", o.run_file);
  if (!o.out.empty()) {
    const auto it = std::find(argv.begin(), argv.end(), "--out");
    require(it != argv.end() && it + 1 != argv.end(), ErrorCode::malformed_input, "recorded argv has no --out");
    *(it + 1) = o.out;
  }
  const int status = run_cli(argv);
  if (status != 0) return status;
  const auto out_it = std::find(argv.begin(), argv.end(), "--out");
  const fs::path out = *(out_it + 1);
  const auto recorded = io::detail::field<std::map<std::string, std::string>>(rec, "artifacts", o.run_file);
  json mismatches = json::array();
  for (const auto& [name, hash] : recorded)
    if (!fs::exists(out / name) || io::sha256_file(out / name) != hash) mismatches.push_back(name);
  std::cout << json{{"replayed", argv}, {"identical", mismatches.empty()}, {"mismatched", mismatches}}.dump()
            << "\n";
  return mismatches.empty() ? 0 : 1;
}

int fail(const std::string& code, const std::string& message, int status) {
  std::cerr << io::error_json(code, message).dump() << "\n";
  return status;
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Circuit analysis toolkit for small decoder transformers"};
  app.require_subcommand(1);
  Options o;

  const auto out = [&](CLI::App* s) { s->add_option("--out", o.out, "Output directory")->required(); };
  const auto model = [&](CLI::App* s) { s->add_option("--model", o.model, "Model directory")->required(); };
  const auto dataset = [&](CLI::App* s) { s->add_option("--dataset", o.dataset, "Dataset JSONL")->required(); };
  const auto format = [&](CLI::App* s) {
    s->add_option("--format", o.formats, "Extra outputs: json, csv, svg")
        ->delimiter(',')
        ->check(CLI::IsMember({"json", "csv", "svg"}));
  };
  const auto layer_head = [&](CLI::App* s) {
    s->add_option("--layer", o.layer, "Layer index");
    s->add_option("--head", o.head, "Head index");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a contrastive agreement dataset");
  gen->add_option("--language", o.language, "Built-in language: english or spanish");
  gen->add_option("--language-file", o.language_file, "LanguageSpec JSON instead of a built-in");
  gen->add_option("--n", o.n, "Number of pairs");
  gen->add_option("--split", o.split, "train, validation or test");
  gen->add_option("--seed", o.seed, "Sampling seed");
  out(gen);

  auto* plant = app.add_subcommand("plant", "Build a model with a planted agreement circuit");
  plant->add_option("--seed", o.seed, "Construction seed");
  plant->add_option("--write-scale", o.write_scale, "Copy head output magnitude");
  plant->add_option("--noise-std", o.noise_std, "Distractor weight noise (default 0.02 * write scale)");
  plant->add_option("--activation", o.activation, "gelu_tanh_approx or identity");
  plant->add_option("--dtype", o.dtype, "Tensor storage: f64 or f32");
  plant->add_flag("--no-one-sided", o.no_one_sided, "Omit the plural-only neuron");
  out(plant);

  auto* patch = app.add_subcommand("patch", "Denoising activation patching grid");
  model(patch);
  dataset(patch);
  patch->add_option("--family", o.family, "resid_pre_grid, attn_out_grid, mlp_out_grid, head_out_last_pos");
  patch->add_option("--view", o.view, "Heatmap values: raw, delta or normalized");
  format(patch);
  out(patch);

  auto* dlda = app.add_subcommand("dlda", "Direct logit-difference attribution per component");
  model(dlda);
  dataset(dlda);
  dlda->add_option("--layer", o.layer, "Also attribute the neurons of this MLP layer");
  dlda->add_flag("--raw-norm", o.raw_norm, "Project onto W_U without the frozen final norm");
  format(dlda);
  out(dlda);

  auto* neurons = app.add_subcommand("neurons", "Per-neuron attribution for one MLP layer");
  model(neurons);
  dataset(neurons);
  neurons->add_option("--layer", o.layer, "MLP layer")->required();
  neurons->add_option("--k", o.k, "Number of top neurons to list");
  neurons->add_flag("--raw-norm", o.raw_norm, "Project onto W_U without the frozen final norm");
  format(neurons);
  out(neurons);

  auto* tokens = app.add_subcommand("tokens", "Tokens a neuron promotes");
  model(tokens);
  tokens->add_option("--layer", o.layer, "MLP layer")->required();
  tokens->add_option("--neuron", o.neuron, "Neuron index")->required();
  tokens->add_option("--sign", o.sign, "positive or negative activation");
  tokens->add_option("--k", o.k, "Number of tokens");
  tokens->add_flag("--no-gamma", o.no_gamma, "Ignore the final norm scale");
  out(tokens);

  auto* pca_cmd = app.add_subcommand("pca", "Principal components of one head's outputs");
  model(pca_cmd);
  dataset(pca_cmd);
  layer_head(pca_cmd);
  pca_cmd->add_option("--from-grid", o.from_grid, "Take the head from a head patching grid's argmax");
  pca_cmd->add_option("--k", o.pca_k, "Number of components");
  out(pca_cmd);

  auto* compose = app.add_subcommand("compose", "Head outputs dotted with a neuron's input weights");
  model(compose);
  dataset(compose);
  layer_head(compose);
  compose->add_option("--from-grid", o.from_grid, "Take the head from a head patching grid's argmax");
  compose->add_option("--neuron-layer", o.neuron_layer, "MLP layer of the neuron")->required();
  compose->add_option("--neuron", o.neuron, "Neuron index")->required();
  compose->add_option("--which", o.which, "W_in or W_gate");
  out(compose);

  auto* steer_cmd = app.add_subcommand("steer", "Add +/- alpha * direction to a head output");
  model(steer_cmd);
  dataset(steer_cmd);
  steer_cmd->add_option("--direction", o.direction, "Direction JSON")->required();
  steer_cmd->add_option("--alpha", o.alpha, "Steering magnitude");
  steer_cmd->add_option("--alpha-from", o.alpha_from, "Use chosen_alpha from a sweep JSON");
  steer_cmd->add_option("--sign", o.sign, "plus, minus or flip (toward the opposite number)");
  layer_head(steer_cmd);
  steer_cmd->add_option("--k", o.steer_k, "Top tokens shown before/after for a few sentences");
  out(steer_cmd);

  auto* sweep = app.add_subcommand("sweep-alpha", "Choose alpha on a validation set");
  model(sweep);
  dataset(sweep);
  sweep->add_option("--direction", o.direction, "Direction JSON")->required();
  sweep->add_option("--grid", o.grid, "Comma-separated alpha values");
  layer_head(sweep);
  out(sweep);

  auto* oracle = app.add_subcommand("oracle-check", "Score analysis outputs against a planted oracle");
  oracle->add_option("--oracle", o.oracle, "oracle.json")->required();
  oracle->add_option("--head-grid", o.head_grid, "head_out_last_pos grid.json")->required();
  oracle->add_option("--neurons", o.neurons_file, "neurons.json")->required();
  oracle->add_option("--direction", o.direction, "direction.json")->required();
  oracle->add_option("--direction-b", o.direction_b, "direction.json fitted on the other language");
  oracle->add_option("--steer", o.steer_file, "steer.json (flip mode)")->required();
  out(oracle);

  auto* replay = app.add_subcommand("replay", "Re-run a recorded invocation and compare artifacts");
  replay->add_option("--run", o.run_file, "run.json")->required();
  replay->add_option("--out", o.out, "Override the output directory");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ExtrasError& e) {
    return fail("unknown_flag", e.what(), 2);
  } catch (const CLI::ParseError& e) {
    return fail("invalid_argument", e.what(), 2);
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (sub == replay) return cmd_replay(o);
    Run run(sub->get_name(), args);
    run.set_out(o.out);
    fs::create_directories(o.out);
    if (sub == gen) cmd_gen_data(o, run);
    else if (sub == plant) cmd_plant(o, run);
    else if (sub == patch) cmd_patch(o, run);
    else if (sub == dlda) cmd_dlda(o, run);
    else if (sub == neurons) cmd_neurons(o, run);
    else if (sub == tokens) cmd_tokens(o, run);
    else if (sub == pca_cmd) cmd_pca(o, run);
    else if (sub == compose) cmd_compose(o, run);
    else if (sub == steer_cmd) cmd_steer(o, run);
    else if (sub == sweep) cmd_sweep_alpha(o, run);
    else if (sub == oracle) cmd_oracle_check(o, run);
    run.finish();
  } catch (const Error& e) {
    return fail(std::string(to_string(e.code())), e.what(), 1);
  } catch (const fs::filesystem_error& e) {
    return fail("io_error", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  return run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
