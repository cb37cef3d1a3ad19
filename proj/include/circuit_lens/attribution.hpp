#pragma once

#include "circuit_lens/error.hpp"
#include "circuit_lens/forward.hpp"
#include "circuit_lens/grammar.hpp"
#include "circuit_lens/hooks.hpp"
#include "circuit_lens/parallel.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace circuit_lens {

enum class ComponentKind { embedding, attn_out, mlp_out, head_out };

/// A block whose output is added into the residual stream.
struct Component {
  ComponentKind kind = ComponentKind::embedding;
  std::size_t layer = 0;
  std::size_t head = 0;

  static Component embedding() { return {ComponentKind::embedding, 0, 0}; }
  static Component attn(std::size_t layer) { return {ComponentKind::attn_out, layer, 0}; }
  static Component mlp(std::size_t layer) { return {ComponentKind::mlp_out, layer, 0}; }
  static Component attn_head(std::size_t layer, std::size_t head) {
    return {ComponentKind::head_out, layer, head};
  }
};

/// Output of `c` at position `pos` as recorded in `cache`.
inline Vector component_output(const ActivationCache& cache, const Component& c, std::size_t pos) {
  require(pos < cache.seq_len(), ErrorCode::invalid_hook, "position outside cached sequence");
  switch (c.kind) {
    case ComponentKind::embedding: return cache.value(HookPoint::resid_pre(0, pos));
    case ComponentKind::attn_out: return cache.value(HookPoint::attn_out(c.layer, pos));
    case ComponentKind::mlp_out: return cache.value(HookPoint::mlp_out(c.layer, pos));
    case ComponentKind::head_out: return cache.value(HookPoint::head_out(c.layer, c.head, pos));
  }
  throw Error(ErrorCode::invalid_hook, "unknown component");
}

/// Residual-space readout vector for logits[g] - logits[b] at `pos`. With a
/// frozen norm it folds in the final gamma and the cached RMS denominator of
/// the full final residual, so projecting the final residual onto it gives the
/// logit difference exactly. Without it this is W_U[:,g] - W_U[:,b].
inline Vector logit_diff_direction(const ModelWeights& weights, const ModelConfig& config,
                                   const ActivationCache& cache, TokenId g, TokenId b,
                                   std::size_t pos, bool frozen_norm = true) {
  check_token(g, config.vocab_size);
  check_token(b, config.vocab_size);
  Vector dir = weights.unembedding.col(g) - weights.unembedding.col(b);
  if (!frozen_norm) return dir;
  require(pos < cache.seq_len(), ErrorCode::invalid_hook, "position outside cached sequence");
  const double denom = cache.final_rms()(static_cast<Eigen::Index>(pos));
  return (dir.array() * effective_gamma(weights.final_norm, config.norm_offset).array() / denom)
      .matrix();
}

/// Direct logit-difference attribution of one component at the last position.
inline double dlda_component(const ActivationCache& cache, const ModelWeights& weights,
                             const ModelConfig& config, TokenId g, TokenId b,
                             const Component& component, bool frozen_norm = true) {
  const std::size_t last = cache.seq_len() - 1;
  return component_output(cache, component, last)
      .dot(logit_diff_direction(weights, config, cache, g, b, last, frozen_norm));
}

/// Per-neuron split of an MLP's attribution: activation times the readout of
/// that neuron's W_out row. Sums to the MLP's dlda_component.
inline Vector neuron_dlda(const ActivationCache& cache, const ModelWeights& weights,
                          const ModelConfig& config, std::size_t layer, TokenId g, TokenId b,
                          bool frozen_norm = true) {
  require(layer < config.n_layers, ErrorCode::invalid_argument,
          "layer " + std::to_string(layer) + " out of range");
  const std::size_t last = cache.seq_len() - 1;
  const Vector readout = logit_diff_direction(weights, config, cache, g, b, last, frozen_norm);
  const Vector per_neuron_write = weights.layers[layer].W_out * readout;  // [d_mlp]
  const auto acts = cache.layer(layer).neuron_act.row(static_cast<Eigen::Index>(last));
  return acts.transpose().cwiseProduct(per_neuron_write);
}

struct TokenScore {
  TokenId token = 0;
  double score = 0.0;

  bool operator==(const TokenScore&) const = default;
};

namespace detail {

inline std::vector<TokenScore> rank_descending(const Vector& scores, std::size_t k) {
  require(k <= static_cast<std::size_t>(scores.size()), ErrorCode::invalid_argument,
          "k exceeds vocabulary size");
  std::vector<TokenScore> all(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index t = 0; t < scores.size(); ++t)
    all[static_cast<std::size_t>(t)] = {static_cast<TokenId>(t), scores(t)};
  const auto better = [](const TokenScore& a, const TokenScore& b) {
    return a.score != b.score ? a.score > b.score : a.token < b.token;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

}  // namespace detail

enum class PromoteSign { positive, negative };

/// Tokens a neuron pushes up when its activation has the given sign. Scores
/// are pure weight-space readouts (no per-input norm denominator).
inline std::vector<TokenScore> promoted_tokens(const ModelWeights& weights,
                                               const ModelConfig& config, std::size_t layer,
                                               std::size_t neuron, PromoteSign sign,
                                               std::size_t k, bool apply_gamma = true) {
  require(layer < config.n_layers, ErrorCode::invalid_argument, "layer out of range");
  require(neuron < config.d_mlp, ErrorCode::invalid_argument, "neuron out of range");
  Vector row = weights.layers[layer].W_out.row(static_cast<Eigen::Index>(neuron)).transpose();
  if (apply_gamma)
    row.array() *= effective_gamma(weights.final_norm, config.norm_offset).array();
  Vector scores = weights.unembedding.transpose() * row;
  if (sign == PromoteSign::negative) scores = -scores;
  return detail::rank_descending(scores, k);
}

/// Top-k tokens by logit, ties by ascending token id.
template <typename Derived>
std::vector<TokenScore> top_k_tokens(const Eigen::MatrixBase<Derived>& logits_at_last,
                                     std::size_t k) {
  Vector scores(logits_at_last.size());
  for (Eigen::Index i = 0; i < scores.size(); ++i) scores(i) = logits_at_last(i);
  return detail::rank_descending(scores, k);
}

/// Attention weights scaled by the norm of what each source position writes
/// through this head, rows renormalized to sum to one.
inline Matrix ov_weighted_pattern(const ActivationCache& cache, const ModelWeights& weights,
                                  std::size_t layer, std::size_t head) {
  require(layer < cache.n_layers(), ErrorCode::invalid_argument, "layer out of range");
  const LayerCache& lc = cache.layer(layer);
  require(head < lc.attn_pattern.size(), ErrorCode::invalid_argument, "head out of range");
  const Matrix written = lc.head_values[head] * weights.layers[layer].W_O[head];
  const Vector norms = written.rowwise().norm();
  Matrix out = lc.attn_pattern[head];
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.row(i) = out.row(i).cwiseProduct(norms.transpose());
    const double total = out.row(i).sum();
    if (total > 0.0)
      out.row(i) /= total;
    else
      out.row(i).setZero();
  }
  return out;
}

/// Position-indexed average of ov_weighted_pattern over clean runs.
inline Matrix mean_ov_weighted_pattern(const ModelWeights& weights, const ModelConfig& config,
                                       std::span<const ContrastivePair> pairs, std::size_t layer,
                                       std::size_t head, std::size_t threads = 0) {
  require(!pairs.empty(), ErrorCode::invalid_argument, "empty dataset");
  std::vector<Matrix> per_pair(pairs.size());
  parallel_for(
      pairs.size(),
      [&](std::size_t i) {
        per_pair[i] =
            ov_weighted_pattern(forward(weights, config, pairs[i].clean).cache, weights, layer, head);
      },
      threads);
  Matrix mean = Matrix::Zero(per_pair[0].rows(), per_pair[0].cols());
  for (const auto& m : per_pair) {
    require(m.rows() == mean.rows(), ErrorCode::incompatible_shapes,
            "dataset pairs have different lengths");
    mean += m;
  }
  return mean / static_cast<double>(pairs.size());
}

/// Dataset-mean direct attributions for every component, plus per-neuron
/// attributions for one MLP layer.
struct AttributionReport {
  bool frozen_norm = true;
  std::size_t n_pairs = 0;
  double embedding = 0.0;
  std::vector<double> attn;               // [n_layers]
  std::vector<double> mlp;                // [n_layers]
  std::vector<std::vector<double>> heads; // [n_layers][n_heads]
  std::optional<std::size_t> neuron_layer;
  std::vector<double> neurons;            // [d_mlp] when neuron_layer is set
  double mean_logit_diff = 0.0;
};

inline AttributionReport attribution_report(const ModelWeights& weights, const ModelConfig& config,
                                            std::span<const ContrastivePair> pairs,
                                            std::optional<std::size_t> neuron_layer = std::nullopt,
                                            bool frozen_norm = true, std::size_t threads = 0) {
  require(!pairs.empty(), ErrorCode::invalid_argument, "empty dataset");
  if (neuron_layer)
    require(*neuron_layer < config.n_layers, ErrorCode::invalid_argument, "layer out of range");
  const std::size_t L = config.n_layers;
  const std::size_t H = config.n_heads;
  std::vector<AttributionReport> per_pair(pairs.size());
  parallel_for(
      pairs.size(),
      [&](std::size_t i) {
        const auto& p = pairs[i];
        const auto run = forward(weights, config, p.clean);
        AttributionReport& r = per_pair[i];
        r.embedding = dlda_component(run.cache, weights, config, p.g, p.b, Component::embedding(),
                                     frozen_norm);
        r.attn.resize(L);
        r.mlp.resize(L);
        r.heads.assign(L, std::vector<double>(H));
        for (std::size_t l = 0; l < L; ++l) {
          r.attn[l] =
              dlda_component(run.cache, weights, config, p.g, p.b, Component::attn(l), frozen_norm);
          r.mlp[l] =
              dlda_component(run.cache, weights, config, p.g, p.b, Component::mlp(l), frozen_norm);
          for (std::size_t h = 0; h < H; ++h)
            r.heads[l][h] = dlda_component(run.cache, weights, config, p.g, p.b,
                                           Component::attn_head(l, h), frozen_norm);
        }
        if (neuron_layer) {
          const Vector nd =
              neuron_dlda(run.cache, weights, config, *neuron_layer, p.g, p.b, frozen_norm);
          r.neurons.assign(nd.data(), nd.data() + nd.size());
        }
        r.mean_logit_diff = last_logit_diff(run, p.g, p.b);
      },
      threads);

  AttributionReport out;
  out.frozen_norm = frozen_norm;
  out.n_pairs = pairs.size();
  out.neuron_layer = neuron_layer;
  out.attn.assign(L, 0.0);
  out.mlp.assign(L, 0.0);
  out.heads.assign(L, std::vector<double>(H, 0.0));
  if (neuron_layer) out.neurons.assign(config.d_mlp, 0.0);
  for (const auto& r : per_pair) {
    out.embedding += r.embedding;
    out.mean_logit_diff += r.mean_logit_diff;
    for (std::size_t l = 0; l < L; ++l) {
      out.attn[l] += r.attn[l];
      out.mlp[l] += r.mlp[l];
      for (std::size_t h = 0; h < H; ++h) out.heads[l][h] += r.heads[l][h];
    }
    for (std::size_t n = 0; n < r.neurons.size(); ++n) out.neurons[n] += r.neurons[n];
  }
  const double n = static_cast<double>(pairs.size());
  out.embedding /= n;
  out.mean_logit_diff /= n;
  for (std::size_t l = 0; l < L; ++l) {
    out.attn[l] /= n;
    out.mlp[l] /= n;
    for (auto& v : out.heads[l]) v /= n;
  }
  for (auto& v : out.neurons) v /= n;
  return out;
}

/// Neuron indices ordered by |value|, largest first; ties by index.
inline std::vector<std::size_t> rank_by_magnitude(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(values[a]) > std::abs(values[b]);
  });
  return idx;
}

}  // namespace circuit_lens
