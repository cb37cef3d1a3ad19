#pragma once

#include "circuit_lens/error.hpp"
#include "circuit_lens/linalg.hpp"

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace circuit_lens {

enum class Activation { gelu_tanh_approx, identity };
enum class EmbedScale { sqrt_d_model, none };
enum class NormOffset { plain_gamma, one_plus_gamma };

struct ModelConfig {
  std::size_t n_layers = 1;
  std::size_t n_heads = 1;
  std::size_t d_model = 8;
  std::size_t d_head = 4;
  std::size_t d_mlp = 16;
  std::size_t vocab_size = 16;
  std::size_t max_seq = 16;
  std::optional<double> rope_base;  // nullopt disables rotary positions
  double norm_eps = 1e-6;
  Activation activation = Activation::gelu_tanh_approx;
  EmbedScale embed_scale = EmbedScale::none;
  NormOffset norm_offset = NormOffset::plain_gamma;
  bool tied_embeddings = false;

  bool operator==(const ModelConfig&) const = default;
};

inline void validate(const ModelConfig& c) {
  const auto positive = [](std::size_t v, const char* name) {
    require(v >= 1, ErrorCode::invalid_argument, std::string(name) + " must be >= 1");
  };
  positive(c.n_layers, "n_layers");
  positive(c.n_heads, "n_heads");
  positive(c.d_model, "d_model");
  positive(c.d_head, "d_head");
  positive(c.d_mlp, "d_mlp");
  require(c.vocab_size >= 2, ErrorCode::invalid_argument, "vocab_size must be >= 2");
  require(c.max_seq >= 2, ErrorCode::invalid_argument, "max_seq must be >= 2");
  require(c.norm_eps > 0.0 && std::isfinite(c.norm_eps), ErrorCode::invalid_argument,
          "norm_eps must be a positive real");
  if (c.rope_base) {
    require(*c.rope_base > 0.0 && std::isfinite(*c.rope_base), ErrorCode::invalid_argument,
            "rope_base must be a positive real");
    require(c.d_head % 2 == 0, ErrorCode::invalid_argument,
            "rotary positions need an even d_head");
  }
}

struct LayerWeights {
  Vector attn_norm;             // [d_model]
  std::vector<Matrix> W_Q;      // per head [d_model x d_head]
  std::vector<Matrix> W_K;      // per head [d_model x d_head]
  std::vector<Matrix> W_V;      // per head [d_model x d_head]
  std::vector<Matrix> W_O;      // per head [d_head x d_model]
  Vector mlp_norm;              // [d_model]
  Matrix W_gate;                // [d_model x d_mlp]
  Matrix W_in;                  // [d_model x d_mlp]
  Matrix W_out;                 // [d_mlp x d_model]
};

struct ModelWeights {
  Matrix token_embedding;       // [vocab x d_model]
  std::vector<LayerWeights> layers;
  Vector final_norm;            // [d_model]
  Matrix unembedding;           // [d_model x vocab]
};

/// Zero-initialised weights with every shape matching `config`. Norm scales
/// start at the neutral value for the configured offset convention.
inline ModelWeights zero_weights(const ModelConfig& config) {
  validate(config);
  const auto d = static_cast<Eigen::Index>(config.d_model);
  const auto dh = static_cast<Eigen::Index>(config.d_head);
  const auto dm = static_cast<Eigen::Index>(config.d_mlp);
  const auto v = static_cast<Eigen::Index>(config.vocab_size);
  const double neutral = config.norm_offset == NormOffset::plain_gamma ? 1.0 : 0.0;

  ModelWeights w;
  w.token_embedding = Matrix::Zero(v, d);
  w.layers.resize(config.n_layers);
  for (auto& layer : w.layers) {
    layer.attn_norm = Vector::Constant(d, neutral);
    layer.mlp_norm = Vector::Constant(d, neutral);
    layer.W_Q.assign(config.n_heads, Matrix::Zero(d, dh));
    layer.W_K.assign(config.n_heads, Matrix::Zero(d, dh));
    layer.W_V.assign(config.n_heads, Matrix::Zero(d, dh));
    layer.W_O.assign(config.n_heads, Matrix::Zero(dh, d));
    layer.W_gate = Matrix::Zero(d, dm);
    layer.W_in = Matrix::Zero(d, dm);
    layer.W_out = Matrix::Zero(dm, d);
  }
  w.final_norm = Vector::Constant(d, neutral);
  w.unembedding = Matrix::Zero(d, v);
  return w;
}

namespace detail {

inline void check_shape(const Matrix& m, std::size_t rows, std::size_t cols,
                        const std::string& name) {
  require(static_cast<std::size_t>(m.rows()) == rows &&
              static_cast<std::size_t>(m.cols()) == cols,
          ErrorCode::shape_mismatch,
          name + " has shape [" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
              "], expected [" + std::to_string(rows) + "x" + std::to_string(cols) + "]");
  require(m.allFinite(), ErrorCode::non_finite, name + " contains NaN or Inf");
}

inline void check_shape(const Vector& v, std::size_t n, const std::string& name) {
  require(static_cast<std::size_t>(v.size()) == n, ErrorCode::shape_mismatch,
          name + " has length " + std::to_string(v.size()) + ", expected " + std::to_string(n));
  require(v.allFinite(), ErrorCode::non_finite, name + " contains NaN or Inf");
}

}  // namespace detail

/// Throws unless every tensor is finite and shaped as `config` demands.
inline void validate(const ModelWeights& w, const ModelConfig& config) {
  validate(config);
  const std::size_t d = config.d_model;
  detail::check_shape(w.token_embedding, config.vocab_size, d, "embed.W_E");
  require(w.layers.size() == config.n_layers, ErrorCode::shape_mismatch,
          "layer count does not match config");
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& layer = w.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    detail::check_shape(layer.attn_norm, d, prefix + "attn_norm");
    detail::check_shape(layer.mlp_norm, d, prefix + "mlp_norm");
    for (const auto* heads : {&layer.W_Q, &layer.W_K, &layer.W_V, &layer.W_O}) {
      require(heads->size() == config.n_heads, ErrorCode::shape_mismatch,
              prefix + "attn head count does not match config");
    }
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      const std::string hs = "[" + std::to_string(h) + "]";
      detail::check_shape(layer.W_Q[h], d, config.d_head, prefix + "attn.W_Q" + hs);
      detail::check_shape(layer.W_K[h], d, config.d_head, prefix + "attn.W_K" + hs);
      detail::check_shape(layer.W_V[h], d, config.d_head, prefix + "attn.W_V" + hs);
      detail::check_shape(layer.W_O[h], config.d_head, d, prefix + "attn.W_O" + hs);
    }
    detail::check_shape(layer.W_gate, d, config.d_mlp, prefix + "mlp.W_gate");
    detail::check_shape(layer.W_in, d, config.d_mlp, prefix + "mlp.W_in");
    detail::check_shape(layer.W_out, config.d_mlp, d, prefix + "mlp.W_out");
  }
  detail::check_shape(w.final_norm, d, "final_norm");
  detail::check_shape(w.unembedding, d, config.vocab_size, "unembed.W_U");
  if (config.tied_embeddings) {
    require(w.unembedding == w.token_embedding.transpose(), ErrorCode::shape_mismatch,
            "tied embeddings: unembedding must equal the transposed token embedding");
  }
}

/// Dense Gaussian weights, used for property tests on unstructured models.
inline ModelWeights random_weights(const ModelConfig& config, std::uint64_t seed,
                                   double scale = 0.5) {
  std::mt19937_64 rng(seed);
  ModelWeights w = zero_weights(config);
  const auto d = static_cast<Eigen::Index>(config.d_model);
  const auto dh = static_cast<Eigen::Index>(config.d_head);
  const auto dm = static_cast<Eigen::Index>(config.d_mlp);
  const auto v = static_cast<Eigen::Index>(config.vocab_size);
  const double fan_d = scale / std::sqrt(static_cast<double>(d));

  w.token_embedding = gaussian_matrix(v, d, 1.0, rng);
  for (auto& layer : w.layers) {
    layer.attn_norm.array() += gaussian_vector(d, 0.1, rng).array();
    layer.mlp_norm.array() += gaussian_vector(d, 0.1, rng).array();
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      layer.W_Q[h] = gaussian_matrix(d, dh, fan_d, rng);
      layer.W_K[h] = gaussian_matrix(d, dh, fan_d, rng);
      layer.W_V[h] = gaussian_matrix(d, dh, fan_d, rng);
      layer.W_O[h] = gaussian_matrix(dh, d, scale / std::sqrt(static_cast<double>(dh)), rng);
    }
    layer.W_gate = gaussian_matrix(d, dm, fan_d * 2.0, rng);
    layer.W_in = gaussian_matrix(d, dm, fan_d * 2.0, rng);
    layer.W_out = gaussian_matrix(dm, d, scale / std::sqrt(static_cast<double>(dm)), rng);
  }
  w.final_norm.array() += gaussian_vector(d, 0.1, rng).array();
  w.unembedding = config.tied_embeddings ? Matrix(w.token_embedding.transpose())
                                         : gaussian_matrix(d, v, 1.0, rng);
  return w;
}

}  // namespace circuit_lens
