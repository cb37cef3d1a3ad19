#pragma once

#include "circuit_lens/error.hpp"
#include "circuit_lens/hooks.hpp"
#include "circuit_lens/linalg.hpp"
#include "circuit_lens/model.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <span>
#include <vector>

namespace circuit_lens {

using TokenSequence = std::vector<TokenId>;

inline Vector effective_gamma(const Vector& scale, NormOffset offset) {
  return offset == NormOffset::one_plus_gamma ? Vector(scale.array() + 1.0) : scale;
}

inline double rms_denominator(const Eigen::Ref<const RowVector>& x, double eps) {
  return std::sqrt(x.squaredNorm() / static_cast<double>(x.size()) + eps);
}

/// x / sqrt(mean(x^2) + eps) scaled elementwise by gamma (or 1 + gamma).
inline Vector rms_norm(const Vector& x, const Vector& scale, double eps, NormOffset offset) {
  require(x.size() == scale.size(), ErrorCode::dimension_mismatch,
          "rms_norm: input has " + std::to_string(x.size()) + " entries, scale has " +
              std::to_string(scale.size()));
  const double denom = rms_denominator(x.transpose(), eps);
  return (x.array() / denom * effective_gamma(scale, offset).array()).matrix();
}

namespace detail {

inline Matrix rms_norm_rows(const Matrix& x, const Vector& scale, double eps, NormOffset offset,
                            Vector* denominators = nullptr) {
  const Vector gamma = effective_gamma(scale, offset);
  Matrix out(x.rows(), x.cols());
  if (denominators) denominators->resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double denom = rms_denominator(x.row(i), eps);
    out.row(i) = (x.row(i).array() / denom) * gamma.transpose().array();
    if (denominators) (*denominators)(i) = denom;
  }
  return out;
}

// Rotate-half rotary embedding: dimension i pairs with i + d_head/2.
inline void apply_rope(Matrix& m, double base) {
  const Eigen::Index half = m.cols() / 2;
  const double d_head = static_cast<double>(m.cols());
  for (Eigen::Index pos = 0; pos < m.rows(); ++pos) {
    for (Eigen::Index i = 0; i < half; ++i) {
      const double theta =
          static_cast<double>(pos) / std::pow(base, 2.0 * static_cast<double>(i) / d_head);
      const double c = std::cos(theta);
      const double s = std::sin(theta);
      const double a = m(pos, i);
      const double b = m(pos, i + half);
      m(pos, i) = a * c - b * s;
      m(pos, i + half) = b * c + a * s;
    }
  }
}

inline void apply_stream_interventions(Matrix& values, std::span<const Intervention> interventions,
                                       HookKind kind, std::size_t layer, std::size_t unit = 0) {
  for (const auto& iv : interventions) {
    const HookPoint& t = iv.target;
    if (t.kind != kind || t.layer != layer) continue;
    if (kind == HookKind::head_out && t.unit != unit) continue;
    const auto p = static_cast<Eigen::Index>(t.pos);
    if (iv.mode == InterventionMode::set)
      values.row(p) = iv.value.transpose();
    else
      values.row(p) += iv.value.transpose();
  }
}

inline void apply_neuron_interventions(Matrix& acts, std::span<const Intervention> interventions,
                                       std::size_t layer) {
  for (const auto& iv : interventions) {
    const HookPoint& t = iv.target;
    if (t.kind != HookKind::neuron_act || t.layer != layer) continue;
    double& slot = acts(static_cast<Eigen::Index>(t.pos), static_cast<Eigen::Index>(t.unit));
    slot = iv.mode == InterventionMode::set ? iv.value(0) : slot + iv.value(0);
  }
}

}  // namespace detail

struct ForwardResult {
  Matrix logits;  // [seq x vocab]
  ActivationCache cache;
};

inline void validate_tokens(std::span<const TokenId> tokens, const ModelConfig& config) {
  require(!tokens.empty() && tokens.size() <= config.max_seq, ErrorCode::invalid_argument,
          "token sequence length " + std::to_string(tokens.size()) + " outside [1, " +
              std::to_string(config.max_seq) + "]");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    require(tokens[i] >= 0 && static_cast<std::size_t>(tokens[i]) < config.vocab_size,
            ErrorCode::token_out_of_range,
            "token id " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                " outside vocabulary of size " + std::to_string(config.vocab_size));
  }
}

/// Pre-norm decoder forward pass recording every hook point. Interventions
/// overwrite (or add to) a value as soon as it is produced, so everything
/// downstream sees the modified value.
inline ForwardResult forward(const ModelWeights& weights, const ModelConfig& config,
                             std::span<const TokenId> tokens,
                             std::span<const Intervention> interventions = {}) {
  validate_tokens(tokens, config);
  const std::size_t seq = tokens.size();
  for (const auto& iv : interventions) {
    validate(iv.target, config, seq);
    require(static_cast<std::size_t>(iv.value.size()) == iv.target.value_size(config),
            ErrorCode::dimension_mismatch,
            to_string(iv.target) + ": intervention value has wrong dimension");
  }

  const auto n = static_cast<Eigen::Index>(seq);
  const auto d = static_cast<Eigen::Index>(config.d_model);
  const double embed_mult = config.embed_scale == EmbedScale::sqrt_d_model
                                ? std::sqrt(static_cast<double>(config.d_model))
                                : 1.0;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(config.d_head));

  ForwardResult result;
  CacheWriter writer{result.cache};
  writer.set_seq_len(seq);
  auto& layers = writer.layers();
  layers.resize(config.n_layers);

  Matrix resid(n, d);
  for (Eigen::Index p = 0; p < n; ++p)
    resid.row(p) = weights.token_embedding.row(tokens[static_cast<std::size_t>(p)]) * embed_mult;

  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const LayerWeights& lw = weights.layers[l];
    LayerCache& lc = layers[l];

    detail::apply_stream_interventions(resid, interventions, HookKind::resid_pre, l);
    lc.resid_pre = resid;

    const Matrix normed = detail::rms_norm_rows(resid, lw.attn_norm, config.norm_eps,
                                                config.norm_offset);
    lc.attn_out = Matrix::Zero(n, d);
    lc.attn_pattern.resize(config.n_heads);
    lc.head_values.resize(config.n_heads);
    lc.head_out.resize(config.n_heads);
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      Matrix q = normed * lw.W_Q[h];
      Matrix k = normed * lw.W_K[h];
      Matrix v = normed * lw.W_V[h];
      if (config.rope_base) {
        detail::apply_rope(q, *config.rope_base);
        detail::apply_rope(k, *config.rope_base);
      }
      Matrix pattern = Matrix::Zero(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        double max_score = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j <= i; ++j) {
          pattern(i, j) = q.row(i).dot(k.row(j)) * attn_scale;
          max_score = std::max(max_score, pattern(i, j));
        }
        double total = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          pattern(i, j) = std::exp(pattern(i, j) - max_score);
          total += pattern(i, j);
        }
        for (Eigen::Index j = 0; j <= i; ++j) pattern(i, j) /= total;
      }
      Matrix out = (pattern * v) * lw.W_O[h];
      detail::apply_stream_interventions(out, interventions, HookKind::head_out, l, h);
      lc.attn_out += out;
      lc.attn_pattern[h] = std::move(pattern);
      lc.head_values[h] = std::move(v);
      lc.head_out[h] = std::move(out);
    }
    detail::apply_stream_interventions(lc.attn_out, interventions, HookKind::attn_out, l);
    resid += lc.attn_out;

    const Matrix mlp_in = detail::rms_norm_rows(resid, lw.mlp_norm, config.norm_eps,
                                                config.norm_offset);
    Matrix gate = mlp_in * lw.W_gate;
    if (config.activation == Activation::gelu_tanh_approx)
      gate = gate.unaryExpr([](double x) { return gelu_tanh(x); });
    lc.neuron_act = gate.cwiseProduct(mlp_in * lw.W_in);
    detail::apply_neuron_interventions(lc.neuron_act, interventions, l);
    lc.mlp_out = lc.neuron_act * lw.W_out;
    detail::apply_stream_interventions(lc.mlp_out, interventions, HookKind::mlp_out, l);
    resid += lc.mlp_out;

    detail::apply_stream_interventions(resid, interventions, HookKind::resid_post, l);
    lc.resid_post = resid;
  }

  writer.final_resid() = resid;
  const Matrix final_normed = detail::rms_norm_rows(resid, weights.final_norm, config.norm_eps,
                                                    config.norm_offset, &writer.final_rms());
  result.logits = final_normed * weights.unembedding;
  return result;
}

inline ForwardResult forward(const ModelWeights& weights, const ModelConfig& config,
                             std::span<const TokenId> tokens,
                             std::initializer_list<Intervention> interventions) {
  return forward(weights, config, tokens,
                 std::span<const Intervention>(interventions.begin(), interventions.size()));
}

inline void check_token(TokenId t, std::size_t vocab_size) {
  require(t >= 0 && static_cast<std::size_t>(t) < vocab_size, ErrorCode::token_out_of_range,
          "token id " + std::to_string(t) + " outside vocabulary");
}

/// logits[g] - logits[b].
template <typename Derived>
double logit_diff(const Eigen::MatrixBase<Derived>& logits_at_last, TokenId g, TokenId b) {
  check_token(g, static_cast<std::size_t>(logits_at_last.size()));
  check_token(b, static_cast<std::size_t>(logits_at_last.size()));
  return logits_at_last(g) - logits_at_last(b);
}

inline double last_logit_diff(const ForwardResult& run, TokenId g, TokenId b) {
  return logit_diff(run.logits.row(run.logits.rows() - 1), g, b);
}

}  // namespace circuit_lens
