#pragma once

#include "circuit_lens/error.hpp"
#include "circuit_lens/linalg.hpp"
#include "circuit_lens/model.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace circuit_lens {

enum class HookKind { resid_pre, resid_post, attn_out, head_out, mlp_out, neuron_act };

inline std::string to_string(HookKind kind) {
  switch (kind) {
    case HookKind::resid_pre: return "resid_pre";
    case HookKind::resid_post: return "resid_post";
    case HookKind::attn_out: return "attn_out";
    case HookKind::head_out: return "head_out";
    case HookKind::mlp_out: return "mlp_out";
    case HookKind::neuron_act: return "neuron_act";
  }
  return "unknown";
}

/// Address of one activation. `unit` is the head index for head_out, the
/// neuron index for neuron_act, and unused otherwise.
struct HookPoint {
  HookKind kind = HookKind::resid_pre;
  std::size_t layer = 0;
  std::size_t unit = 0;
  std::size_t pos = 0;

  bool operator==(const HookPoint&) const = default;

  static HookPoint resid_pre(std::size_t layer, std::size_t pos) {
    return {HookKind::resid_pre, layer, 0, pos};
  }
  static HookPoint resid_post(std::size_t layer, std::size_t pos) {
    return {HookKind::resid_post, layer, 0, pos};
  }
  static HookPoint attn_out(std::size_t layer, std::size_t pos) {
    return {HookKind::attn_out, layer, 0, pos};
  }
  static HookPoint head_out(std::size_t layer, std::size_t head, std::size_t pos) {
    return {HookKind::head_out, layer, head, pos};
  }
  static HookPoint mlp_out(std::size_t layer, std::size_t pos) {
    return {HookKind::mlp_out, layer, 0, pos};
  }
  static HookPoint neuron_act(std::size_t layer, std::size_t neuron, std::size_t pos) {
    return {HookKind::neuron_act, layer, neuron, pos};
  }

  /// 1 for scalar-valued neuron activations, d_model for stream values.
  std::size_t value_size(const ModelConfig& config) const {
    return kind == HookKind::neuron_act ? 1 : config.d_model;
  }
};

inline std::string to_string(const HookPoint& hp) {
  std::string s = to_string(hp.kind) + "(L" + std::to_string(hp.layer);
  if (hp.kind == HookKind::head_out) s += ",H" + std::to_string(hp.unit);
  if (hp.kind == HookKind::neuron_act) s += ",N" + std::to_string(hp.unit);
  return s + ",pos" + std::to_string(hp.pos) + ")";
}

inline void validate(const HookPoint& hp, const ModelConfig& config, std::size_t seq_len) {
  require(hp.layer < config.n_layers, ErrorCode::invalid_hook,
          to_string(hp) + ": layer out of range");
  require(hp.pos < seq_len, ErrorCode::invalid_hook,
          to_string(hp) + ": position exceeds sequence length " + std::to_string(seq_len));
  if (hp.kind == HookKind::head_out)
    require(hp.unit < config.n_heads, ErrorCode::invalid_hook, to_string(hp) + ": no such head");
  if (hp.kind == HookKind::neuron_act)
    require(hp.unit < config.d_mlp, ErrorCode::invalid_hook, to_string(hp) + ": no such neuron");
}

enum class InterventionMode { set, add };

/// do-operator override applied the moment the target value is produced.
struct Intervention {
  HookPoint target;
  InterventionMode mode = InterventionMode::set;
  Vector value;

  static Intervention set(HookPoint target, Vector value) {
    return {target, InterventionMode::set, std::move(value)};
  }
  static Intervention add(HookPoint target, Vector value) {
    return {target, InterventionMode::add, std::move(value)};
  }
};

struct LayerCache {
  Matrix resid_pre;                   // [seq x d_model]
  std::vector<Matrix> attn_pattern;   // per head [seq x seq], row = query
  std::vector<Matrix> head_values;    // per head [seq x d_head]
  std::vector<Matrix> head_out;       // per head [seq x d_model]
  Matrix attn_out;                    // [seq x d_model]
  Matrix neuron_act;                  // [seq x d_mlp]
  Matrix mlp_out;                     // [seq x d_model]
  Matrix resid_post;                  // [seq x d_model]
};

/// Everything recorded during one forward pass. Only the forward pass writes
/// into it; consumers get const views.
class ActivationCache {
 public:
  ActivationCache() = default;

  std::size_t seq_len() const { return seq_len_; }
  std::size_t n_layers() const { return layers_.size(); }
  const LayerCache& layer(std::size_t l) const {
    require(l < layers_.size(), ErrorCode::invalid_hook, "cache has no layer " + std::to_string(l));
    return layers_[l];
  }
  const Matrix& final_resid() const { return final_resid_; }
  const Vector& final_rms() const { return final_rms_; }

  /// Value recorded at `hp`: a d_model vector, or a 1-vector for neuron_act.
  Vector value(const HookPoint& hp) const {
    require(hp.layer < layers_.size() && hp.pos < seq_len_, ErrorCode::invalid_hook,
            to_string(hp) + " not present in cache");
    const LayerCache& lc = layers_[hp.layer];
    const auto p = static_cast<Eigen::Index>(hp.pos);
    switch (hp.kind) {
      case HookKind::resid_pre: return lc.resid_pre.row(p).transpose();
      case HookKind::resid_post: return lc.resid_post.row(p).transpose();
      case HookKind::attn_out: return lc.attn_out.row(p).transpose();
      case HookKind::mlp_out: return lc.mlp_out.row(p).transpose();
      case HookKind::head_out:
        require(hp.unit < lc.head_out.size(), ErrorCode::invalid_hook,
                to_string(hp) + " not present in cache");
        return lc.head_out[hp.unit].row(p).transpose();
      case HookKind::neuron_act:
        require(static_cast<Eigen::Index>(hp.unit) < lc.neuron_act.cols(),
                ErrorCode::invalid_hook, to_string(hp) + " not present in cache");
        return Vector::Constant(1, lc.neuron_act(p, static_cast<Eigen::Index>(hp.unit)));
    }
    throw Error(ErrorCode::invalid_hook, "unknown hook kind");
  }

  /// Enumerates every hook point this cache holds, each exactly once.
  std::vector<HookPoint> hook_points() const {
    std::vector<HookPoint> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const LayerCache& lc = layers_[l];
      for (std::size_t p = 0; p < seq_len_; ++p) {
        out.push_back(HookPoint::resid_pre(l, p));
        for (std::size_t h = 0; h < lc.head_out.size(); ++h)
          out.push_back(HookPoint::head_out(l, h, p));
        out.push_back(HookPoint::attn_out(l, p));
        for (Eigen::Index n = 0; n < lc.neuron_act.cols(); ++n)
          out.push_back(HookPoint::neuron_act(l, static_cast<std::size_t>(n), p));
        out.push_back(HookPoint::mlp_out(l, p));
        out.push_back(HookPoint::resid_post(l, p));
      }
    }
    return out;
  }

 private:
  friend struct CacheWriter;
  std::size_t seq_len_ = 0;
  std::vector<LayerCache> layers_;
  Matrix final_resid_;
  Vector final_rms_;
};

/// Write access used by the forward pass only.
struct CacheWriter {
  ActivationCache& cache;
  void set_seq_len(std::size_t n) { cache.seq_len_ = n; }
  std::vector<LayerCache>& layers() { return cache.layers_; }
  Matrix& final_resid() { return cache.final_resid_; }
  Vector& final_rms() { return cache.final_rms_; }
};

}  // namespace circuit_lens
