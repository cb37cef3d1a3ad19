#pragma once

#include "circuit_lens/error.hpp"
#include "circuit_lens/forward.hpp"
#include "circuit_lens/grammar.hpp"
#include "circuit_lens/hooks.hpp"
#include "circuit_lens/parallel.hpp"
#include "circuit_lens/pca.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>
#include <span>
#include <string>
#include <vector>

namespace circuit_lens {

/// Last-position outputs of one head, one row per labelled sentence.
struct HeadSamples {
  std::size_t layer = 0;
  std::size_t head = 0;
  Matrix outputs;              // [n_samples x d_model]
  std::vector<Number> labels;  // subject number of each row
};

/// Head outputs at the last position from unpatched runs of both sentences of
/// every pair: row 2i is the clean sentence, row 2i+1 the corrupted one
/// (opposite subject number).
inline HeadSamples collect_head_outputs(const ModelWeights& weights, const ModelConfig& config,
                                        std::span<const ContrastivePair> pairs, std::size_t layer,
                                        std::size_t head, std::size_t threads = 0) {
  require(layer < config.n_layers, ErrorCode::invalid_argument, "layer out of range");
  require(head < config.n_heads, ErrorCode::invalid_argument, "head out of range");
  HeadSamples out;
  out.layer = layer;
  out.head = head;
  out.outputs.resize(static_cast<Eigen::Index>(2 * pairs.size()),
                     static_cast<Eigen::Index>(config.d_model));
  out.labels.resize(2 * pairs.size());
  parallel_for(
      pairs.size(),
      [&](std::size_t i) {
        const auto& p = pairs[i];
        for (std::size_t side = 0; side < 2; ++side) {
          const TokenSequence& tokens = side == 0 ? p.clean : p.corrupted;
          const auto run = forward(weights, config, tokens);
          const std::size_t row = 2 * i + side;
          out.outputs.row(static_cast<Eigen::Index>(row)) =
              run.cache.value(HookPoint::head_out(layer, head, tokens.size() - 1)).transpose();
          out.labels[row] = side == 0 ? p.subject_number_clean : opposite(p.subject_number_clean);
        }
      },
      threads);
  return out;
}

inline constexpr const char* kPluralPositive = "mean plural projection >= mean singular projection";

struct Direction {
  Vector vector;  // unit norm
  std::size_t layer = 0;
  std::size_t head = 0;
  std::string fit_dataset;
  double explained_variance_ratio = 0.0;
  std::string sign_convention = kPluralPositive;
};

inline std::vector<double> project(const Matrix& samples, const Vector& direction) {
  const Vector p = samples * direction;
  return {p.data(), p.data() + p.size()};
}

namespace detail {

inline std::pair<double, double> label_means(std::span<const double> values,
                                             std::span<const Number> labels) {
  double sing = 0.0, plur = 0.0;
  std::size_t ns = 0, np = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (labels[i] == Number::sing) {
      sing += values[i];
      ++ns;
    } else {
      plur += values[i];
      ++np;
    }
  }
  return {ns ? sing / static_cast<double>(ns) : 0.0, np ? plur / static_cast<double>(np) : 0.0};
}

}  // namespace detail

/// PC1 of the head outputs, oriented so plural samples project higher.
inline Direction fit_direction(const HeadSamples& samples, const std::string& dataset_id,
                               std::vector<PrincipalComponent>* components = nullptr,
                               std::size_t k = 2) {
  auto pcs = pca(samples.outputs, std::min<std::size_t>(k, static_cast<std::size_t>(samples.outputs.cols())));
  Direction dir;
  dir.vector = pcs.front().direction.normalized();
  dir.layer = samples.layer;
  dir.head = samples.head;
  dir.fit_dataset = dataset_id;
  dir.explained_variance_ratio = pcs.front().explained_variance_ratio;
  const auto proj = project(samples.outputs, dir.vector);
  const auto [sing, plur] = detail::label_means(proj, samples.labels);
  if (plur < sing) {
    dir.vector = -dir.vector;
    pcs.front().direction = dir.vector;
  }
  if (components) *components = std::move(pcs);
  return dir;
}

enum class NeuronInput { W_in, W_gate };

inline std::string to_string(NeuronInput w) { return w == NeuronInput::W_in ? "W_in" : "W_gate"; }

struct CompositionResult {
  std::vector<double> dots;
  std::vector<Number> labels;
  double mean_sing = 0.0;
  double mean_plur = 0.0;
};

/// Dot product of each head-output sample with a neuron's input column.
inline CompositionResult neuron_composition(const HeadSamples& samples, const ModelWeights& weights,
                                            const ModelConfig& config, std::size_t layer,
                                            std::size_t neuron, NeuronInput which) {
  require(layer < config.n_layers, ErrorCode::invalid_argument, "layer out of range");
  require(neuron < config.d_mlp, ErrorCode::invalid_argument, "neuron out of range");
  const Matrix& w = which == NeuronInput::W_in ? weights.layers[layer].W_in
                                               : weights.layers[layer].W_gate;
  CompositionResult out;
  out.dots = project(samples.outputs, w.col(static_cast<Eigen::Index>(neuron)));
  out.labels = samples.labels;
  std::tie(out.mean_sing, out.mean_plur) = detail::label_means(out.dots, out.labels);
  return out;
}

enum class SteerSign { plus, minus };

struct SteeringSpec {
  Direction direction;
  double alpha = 0.0;
  SteerSign sign = SteerSign::plus;
  std::size_t layer = 0;  // steered head; applied at the last position
  std::size_t head = 0;
};

struct SteerResult {
  double pre_ld = 0.0;
  double post_ld = 0.0;
  bool flipped = false;
  Number subject_number = Number::sing;
};

struct SteerGroup {
  std::size_t n = 0;
  double mean_pre_ld = 0.0;
  double mean_post_ld = 0.0;
  double flip_rate = 0.0;
};

struct SteerReport {
  double alpha = 0.0;
  std::string mode;  // "plus", "minus" or "flip"
  std::size_t layer = 0;
  std::size_t head = 0;
  std::vector<SteerResult> pairs;
  SteerGroup sing;
  SteerGroup plur;
  double flip_rate = 0.0;
};

inline int sign_of(double x) { return (x > 0.0) - (x < 0.0); }

namespace detail {

inline SteerResult steer_one(const ModelWeights& weights, const ModelConfig& config,
                             const ContrastivePair& pair, const Vector& direction,
                             double signed_alpha, std::size_t layer, std::size_t head) {
  SteerResult r;
  r.subject_number = pair.subject_number_clean;
  r.pre_ld = last_logit_diff(forward(weights, config, pair.clean), pair.g, pair.b);
  const auto iv = Intervention::add(HookPoint::head_out(layer, head, pair.clean.size() - 1),
                                    signed_alpha * direction);
  r.post_ld = last_logit_diff(forward(weights, config, pair.clean, {iv}), pair.g, pair.b);
  r.flipped = r.pre_ld != 0.0 && sign_of(r.post_ld) != sign_of(r.pre_ld);
  return r;
}

inline void summarize(SteerReport& report) {
  SteerGroup* groups[2] = {&report.sing, &report.plur};
  std::size_t flips = 0;
  for (const auto& r : report.pairs) {
    SteerGroup& g = *groups[r.subject_number == Number::sing ? 0 : 1];
    ++g.n;
    g.mean_pre_ld += r.pre_ld;
    g.mean_post_ld += r.post_ld;
    g.flip_rate += r.flipped ? 1.0 : 0.0;
    flips += r.flipped ? 1 : 0;
  }
  for (SteerGroup* g : groups) {
    if (g->n == 0) continue;
    const double n = static_cast<double>(g->n);
    g->mean_pre_ld /= n;
    g->mean_post_ld /= n;
    g->flip_rate /= n;
  }
  report.flip_rate =
      report.pairs.empty() ? 0.0 : static_cast<double>(flips) / static_cast<double>(report.pairs.size());
}

inline void check_steerable(const ModelConfig& config, const Direction& dir, std::size_t layer,
                            std::size_t head, double alpha) {
  require(layer < config.n_layers && head < config.n_heads, ErrorCode::invalid_hook,
          "steering target head does not exist");
  require(static_cast<std::size_t>(dir.vector.size()) == config.d_model,
          ErrorCode::dimension_mismatch, "direction dimension differs from d_model");
  require(std::abs(dir.vector.norm() - 1.0) <= 1e-9, ErrorCode::invalid_argument,
          "steering direction must have unit norm");
  require(std::isfinite(alpha) && alpha >= 0.0, ErrorCode::invalid_argument,
          "alpha must be a finite non-negative real");
}

}  // namespace detail

/// Adds +/- alpha * direction to the head output at the last position of
/// every clean sentence and reports the logit diff before and after.
inline SteerReport steer(const ModelWeights& weights, const ModelConfig& config,
                         std::span<const ContrastivePair> pairs, const SteeringSpec& spec,
                         std::size_t threads = 0) {
  detail::check_steerable(config, spec.direction, spec.layer, spec.head, spec.alpha);
  const double signed_alpha = spec.sign == SteerSign::plus ? spec.alpha : -spec.alpha;
  SteerReport report;
  report.alpha = spec.alpha;
  report.mode = spec.sign == SteerSign::plus ? "plus" : "minus";
  report.layer = spec.layer;
  report.head = spec.head;
  report.pairs.resize(pairs.size());
  parallel_for(
      pairs.size(),
      [&](std::size_t i) {
        report.pairs[i] = detail::steer_one(weights, config, pairs[i], spec.direction.vector,
                                            signed_alpha, spec.layer, spec.head);
      },
      threads);
  detail::summarize(report);
  return report;
}

/// Steers each sentence toward the opposite number: +alpha on singular
/// subjects, -alpha on plural ones.
inline SteerReport steer_toward_opposite(const ModelWeights& weights, const ModelConfig& config,
                                         std::span<const ContrastivePair> pairs,
                                         const Direction& direction, double alpha,
                                         std::size_t layer, std::size_t head,
                                         std::size_t threads = 0) {
  detail::check_steerable(config, direction, layer, head, alpha);
  SteerReport report;
  report.alpha = alpha;
  report.mode = "flip";
  report.layer = layer;
  report.head = head;
  report.pairs.resize(pairs.size());
  parallel_for(
      pairs.size(),
      [&](std::size_t i) {
        const double signed_alpha =
            pairs[i].subject_number_clean == Number::sing ? alpha : -alpha;
        report.pairs[i] = detail::steer_one(weights, config, pairs[i], direction.vector,
                                            signed_alpha, layer, head);
      },
      threads);
  detail::summarize(report);
  return report;
}

struct AlphaSweep {
  std::vector<double> grid;
  std::vector<double> flip_rates;
  double chosen_alpha = 0.0;
  double chosen_flip_rate = 0.0;
};

/// Flip rate for every alpha on a validation set; picks the smallest alpha
/// whose flip rate is within 0.01 of the best.
inline AlphaSweep alpha_sweep(const ModelWeights& weights, const ModelConfig& config,
                              std::span<const ContrastivePair> validation,
                              const Direction& direction, std::size_t layer, std::size_t head,
                              std::span<const double> grid, std::size_t threads = 0) {
  require(!validation.empty(), ErrorCode::invalid_argument, "alpha sweep needs validation pairs");
  require(!grid.empty(), ErrorCode::invalid_argument, "alpha grid is empty");
  AlphaSweep out;
  out.grid.assign(grid.begin(), grid.end());
  for (double a : grid) {
    out.flip_rates.push_back(
        steer_toward_opposite(weights, config, validation, direction, a, layer, head, threads)
            .flip_rate);
  }
  const double best = *std::max_element(out.flip_rates.begin(), out.flip_rates.end());
  bool chosen = false;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (out.flip_rates[i] >= best - 0.01 && (!chosen || grid[i] < out.chosen_alpha)) {
      out.chosen_alpha = grid[i];
      out.chosen_flip_rate = out.flip_rates[i];
      chosen = true;
    }
  }
  return out;
}

}  // namespace circuit_lens
