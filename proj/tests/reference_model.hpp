#pragma once

// Straight-line decoder forward written with scalar loops only. It shares no
// code with the library's forward pass beyond reading weight entries, so it
// serves as an independent oracle for logits.

#include "circuit_lens/model.hpp"

#include <cmath>
#include <vector>

namespace reference {

using circuit_lens::Activation;
using circuit_lens::EmbedScale;
using circuit_lens::Matrix;
using circuit_lens::ModelConfig;
using circuit_lens::ModelWeights;
using circuit_lens::NormOffset;
using circuit_lens::Vector;

using Rows = std::vector<std::vector<double>>;

inline std::vector<double> norm(const std::vector<double>& x, const Vector& scale, double eps,
                                NormOffset offset) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double denom = std::sqrt(ss / static_cast<double>(x.size()) + eps);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = offset == NormOffset::one_plus_gamma ? 1.0 + scale(static_cast<Eigen::Index>(i))
                                                          : scale(static_cast<Eigen::Index>(i));
    out[i] = x[i] / denom * g;
  }
  return out;
}

inline std::vector<double> matvec(const std::vector<double>& x, const Matrix& m) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()), 0.0);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(c)] += x[static_cast<std::size_t>(r)] * m(r, c);
  return out;
}

inline double gelu(double x) {
  const double pi = 3.14159265358979323846;
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / pi) * (x + 0.044715 * x * x * x)));
}

inline void rope(std::vector<double>& v, std::size_t pos, double base) {
  const std::size_t half = v.size() / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double theta = static_cast<double>(pos) *
                         std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(v.size()));
    const double a = v[i], b = v[i + half];
    v[i] = a * std::cos(theta) - b * std::sin(theta);
    v[i + half] = a * std::sin(theta) + b * std::cos(theta);
  }
}

/// Logits [seq][vocab].
inline Rows forward(const ModelWeights& w, const ModelConfig& c, const std::vector<int>& tokens) {
  const std::size_t n = tokens.size(), d = c.d_model;
  const double emb = c.embed_scale == EmbedScale::sqrt_d_model ? std::sqrt(static_cast<double>(d)) : 1.0;
  Rows x(n, std::vector<double>(d));
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t i = 0; i < d; ++i)
      x[p][i] = w.token_embedding(tokens[p], static_cast<Eigen::Index>(i)) * emb;

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& lw = w.layers[l];
    Rows h(n);
    for (std::size_t p = 0; p < n; ++p) h[p] = norm(x[p], lw.attn_norm, c.norm_eps, c.norm_offset);
    Rows attn(n, std::vector<double>(d, 0.0));
    for (std::size_t head = 0; head < c.n_heads; ++head) {
      Rows q(n), k(n), v(n);
      for (std::size_t p = 0; p < n; ++p) {
        q[p] = matvec(h[p], lw.W_Q[head]);
        k[p] = matvec(h[p], lw.W_K[head]);
        v[p] = matvec(h[p], lw.W_V[head]);
        if (c.rope_base) {
          rope(q[p], p, *c.rope_base);
          rope(k[p], p, *c.rope_base);
        }
      }
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(i + 1);
        double mx = -1e300;
        for (std::size_t j = 0; j <= i; ++j) {
          double dot = 0.0;
          for (std::size_t t = 0; t < c.d_head; ++t) dot += q[i][t] * k[j][t];
          s[j] = dot / std::sqrt(static_cast<double>(c.d_head));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        std::vector<double> mixed(c.d_head, 0.0);
        for (std::size_t j = 0; j <= i; ++j)
          for (std::size_t t = 0; t < c.d_head; ++t) mixed[t] += s[j] / z * v[j][t];
        const auto o = matvec(mixed, lw.W_O[head]);
        for (std::size_t t = 0; t < d; ++t) attn[i][t] += o[t];
      }
    }
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t i = 0; i < d; ++i) x[p][i] += attn[p][i];

    for (std::size_t p = 0; p < n; ++p) {
      const auto m = norm(x[p], lw.mlp_norm, c.norm_eps, c.norm_offset);
      const auto gate = matvec(m, lw.W_gate);
      const auto in = matvec(m, lw.W_in);
      std::vector<double> act(c.d_mlp);
      for (std::size_t j = 0; j < c.d_mlp; ++j)
        act[j] = (c.activation == Activation::gelu_tanh_approx ? gelu(gate[j]) : gate[j]) * in[j];
      const auto out = matvec(act, lw.W_out);
      for (std::size_t i = 0; i < d; ++i) x[p][i] += out[i];
    }
  }
  Rows logits(n);
  for (std::size_t p = 0; p < n; ++p) logits[p] = matvec(norm(x[p], w.final_norm, c.norm_eps, c.norm_offset), w.unembedding);
  return logits;
}

}  // namespace reference
