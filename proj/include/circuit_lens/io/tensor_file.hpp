#pragma once

// Model directory format:
//   config.json   ModelConfig
//   tensors.json  {name: {dtype: "f32"|"f64", shape: [...], byte_offset: N}}
//   tensors.bin   little-endian row-major tensor data
//   vocab.json    optional list of token strings, index = token id

#include "circuit_lens/error.hpp"
#include "circuit_lens/io/hash.hpp"
#include "circuit_lens/io/json_io.hpp"
#include "circuit_lens/model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace circuit_lens::io {

enum class DType { f32, f64 };

inline std::string to_string(DType t) { return t == DType::f32 ? "f32" : "f64"; }

inline std::size_t dtype_size(DType t) { return t == DType::f32 ? 4 : 8; }

struct TensorEntry {
  DType dtype = DType::f64;
  std::vector<std::size_t> shape;
  std::size_t byte_offset = 0;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
  std::size_t nbytes() const { return numel() * dtype_size(dtype); }
};

using TensorManifest = std::map<std::string, TensorEntry>;

inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kManifestFile = "tensors.json";
inline constexpr const char* kBlobFile = "tensors.bin";
inline constexpr const char* kVocabFile = "vocab.json";

namespace detail {

template <class T>
void append_le(std::string& blob, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  blob.append(bytes, sizeof(T));
}

template <class T>
T read_le(const char* p) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

/// A named tensor as a flat row-major view over one or more matrices.
struct TensorRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<const Matrix*> parts;  // stacked along a leading axis when > 1
  const Vector* vector = nullptr;
};

inline std::vector<TensorRef> tensor_refs(const ModelWeights& w, const ModelConfig& c) {
  std::vector<TensorRef> refs;
  refs.push_back({"embed.W_E", {c.vocab_size, c.d_model}, {&w.token_embedding}, nullptr});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& lw = w.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    const auto stack = [](const std::vector<Matrix>& heads) {
      std::vector<const Matrix*> out;
      for (const auto& m : heads) out.push_back(&m);
      return out;
    };
    refs.push_back({p + "attn.W_Q", {c.n_heads, c.d_model, c.d_head}, stack(lw.W_Q), nullptr});
    refs.push_back({p + "attn.W_K", {c.n_heads, c.d_model, c.d_head}, stack(lw.W_K), nullptr});
    refs.push_back({p + "attn.W_V", {c.n_heads, c.d_model, c.d_head}, stack(lw.W_V), nullptr});
    refs.push_back({p + "attn.W_O", {c.n_heads, c.d_head, c.d_model}, stack(lw.W_O), nullptr});
    refs.push_back({p + "attn_norm", {c.d_model}, {}, &lw.attn_norm});
    refs.push_back({p + "mlp.W_gate", {c.d_model, c.d_mlp}, {&lw.W_gate}, nullptr});
    refs.push_back({p + "mlp.W_in", {c.d_model, c.d_mlp}, {&lw.W_in}, nullptr});
    refs.push_back({p + "mlp.W_out", {c.d_mlp, c.d_model}, {&lw.W_out}, nullptr});
    refs.push_back({p + "mlp_norm", {c.d_model}, {}, &lw.mlp_norm});
  }
  refs.push_back({"final_norm", {c.d_model}, {}, &w.final_norm});
  if (!c.tied_embeddings)
    refs.push_back({"unembed.W_U", {c.d_model, c.vocab_size}, {&w.unembedding}, nullptr});
  return refs;
}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

inline DType parse_dtype(const nlohmann::json& j, const std::string& name) {
  require(j.is_string(), ErrorCode::malformed_header, "tensor '" + name + "': dtype must be a string");
  const auto s = j.get<std::string>();
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw Error(ErrorCode::malformed_header, "tensor '" + name + "': unknown dtype '" + s + "'");
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const TensorManifest& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, e] : m)
    j[name] = {{"dtype", to_string(e.dtype)}, {"shape", e.shape}, {"byte_offset", e.byte_offset}};
  return j;
}

/// Parses and structurally checks a manifest against a blob of `blob_size`
/// bytes: entries must be well formed, lie inside the blob and not overlap.
inline TensorManifest parse_manifest(const std::string& text, std::size_t blob_size) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_header, std::string("tensor header is not JSON: ") + e.what());
  }
  require(j.is_object(), ErrorCode::malformed_header, "tensor header must be a JSON object");
  TensorManifest m;
  for (const auto& [name, entry] : j.items()) {
    require(entry.is_object() && entry.contains("dtype") && entry.contains("shape") &&
                entry.contains("byte_offset"),
            ErrorCode::malformed_header,
            "tensor '" + name + "' needs dtype, shape and byte_offset");
    require(entry.size() == 3, ErrorCode::malformed_header, "tensor '" + name + "' has unknown fields");
    TensorEntry e;
    e.dtype = detail::parse_dtype(entry["dtype"], name);
    require(entry["shape"].is_array(), ErrorCode::malformed_header,
            "tensor '" + name + "': shape must be a list");
    for (const auto& s : entry["shape"]) {
      require(s.is_number_unsigned(), ErrorCode::malformed_header,
              "tensor '" + name + "': shape entries must be non-negative integers");
      e.shape.push_back(s.get<std::size_t>());
    }
    require(entry["byte_offset"].is_number_unsigned(), ErrorCode::malformed_header,
            "tensor '" + name + "': byte_offset must be a non-negative integer");
    e.byte_offset = entry["byte_offset"].get<std::size_t>();
    m.emplace(name, std::move(e));
  }

  std::vector<std::pair<std::size_t, std::string>> by_offset;
  for (const auto& [name, e] : m) by_offset.emplace_back(e.byte_offset, name);
  std::sort(by_offset.begin(), by_offset.end());
  for (std::size_t i = 0; i < by_offset.size(); ++i) {
    const auto& e = m.at(by_offset[i].second);
    const std::size_t end = e.byte_offset + e.nbytes();
    if (i + 1 < by_offset.size())
      require(end <= by_offset[i + 1].first, ErrorCode::overlapping_offsets,
              "tensors '" + by_offset[i].second + "' and '" + by_offset[i + 1].second + "' overlap");
    require(end <= blob_size, ErrorCode::truncated_blob,
            "tensor '" + by_offset[i].second + "' ends at byte " + std::to_string(end) +
                " but the blob has " + std::to_string(blob_size));
  }
  return m;
}

inline std::vector<double> read_tensor(const TensorEntry& e, const std::string& blob) {
  std::vector<double> out(e.numel());
  const char* p = blob.data() + e.byte_offset;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = e.dtype == DType::f64 ? detail::read_le<double>(p + 8 * i)
                                   : static_cast<double>(detail::read_le<float>(p + 4 * i));
  }
  return out;
}

/// Writes config.json, tensors.json, tensors.bin and (when given) vocab.json.
inline void save_model(const std::filesystem::path& dir, const ModelWeights& weights,
                       const ModelConfig& config, DType dtype = DType::f64,
                       const std::vector<std::string>* vocab = nullptr) {
  validate(weights, config);
  std::filesystem::create_directories(dir);
  TensorManifest manifest;
  std::string blob;
  for (const auto& ref : detail::tensor_refs(weights, config)) {
    manifest[ref.name] = {dtype, ref.shape, blob.size()};
    const auto put = [&](double v) {
      if (dtype == DType::f64)
        detail::append_le(blob, v);
      else
        detail::append_le(blob, static_cast<float>(v));
    };
    if (ref.vector) {
      for (Eigen::Index i = 0; i < ref.vector->size(); ++i) put((*ref.vector)(i));
    } else {
      for (const Matrix* m : ref.parts)
        for (Eigen::Index r = 0; r < m->rows(); ++r)
          for (Eigen::Index c = 0; c < m->cols(); ++c) put((*m)(r, c));
    }
  }
  write_file(dir / kConfigFile, dump(to_json(config)));
  write_file(dir / kManifestFile, dump(manifest_to_json(manifest)));
  write_file(dir / kBlobFile, blob);
  if (vocab) {
    require(vocab->size() == config.vocab_size, ErrorCode::shape_mismatch,
            "vocab list length differs from vocab_size");
    write_file(dir / kVocabFile, dump(nlohmann::json(*vocab)));
  }
}

struct LoadedModel {
  ModelConfig config;
  ModelWeights weights;
  std::optional<std::vector<std::string>> vocab;
  std::string model_id;
};

/// Content hash identifying a saved model: config, header and blob bytes.
inline std::string model_id_from_files(const std::string& config_text,
                                       const std::string& manifest_text, const std::string& blob) {
  Sha256 h;
  for (const auto* part : {&config_text, &manifest_text, &blob}) {
    h.update(std::to_string(part->size())).update(":").update(*part);
  }
  return h.hex();
}

inline std::string model_id(const std::filesystem::path& dir) {
  return model_id_from_files(read_file(dir / kConfigFile), read_file(dir / kManifestFile),
                             read_file(dir / kBlobFile));
}

inline LoadedModel load_model(const std::filesystem::path& dir) {
  const std::string config_text = read_file(dir / kConfigFile);
  const std::string manifest_text = read_file(dir / kManifestFile);
  const std::string blob = read_file(dir / kBlobFile);

  LoadedModel out;
  try {
    out.config = model_config_from_json(nlohmann::json::parse(config_text));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_header, std::string("config.json: ") + e.what());
  }
  validate(out.config);
  const TensorManifest manifest = parse_manifest(manifest_text, blob.size());

  out.weights = zero_weights(out.config);
  auto refs = detail::tensor_refs(out.weights, out.config);
  for (const auto& [name, e] : manifest) {
    const bool known = std::any_of(refs.begin(), refs.end(),
                                   [&](const detail::TensorRef& r) { return r.name == name; });
    require(known, ErrorCode::malformed_header, "unexpected tensor '" + name + "'");
  }
  for (const auto& ref : refs) {
    const auto it = manifest.find(ref.name);
    require(it != manifest.end(), ErrorCode::malformed_header, "missing tensor '" + ref.name + "'");
    require(it->second.shape == ref.shape, ErrorCode::shape_mismatch,
            "tensor '" + ref.name + "' has shape " + detail::shape_string(it->second.shape) +
                ", config expects " + detail::shape_string(ref.shape));
    const auto values = read_tensor(it->second, blob);
    std::size_t k = 0;
    if (ref.vector) {
      auto* v = const_cast<Vector*>(ref.vector);
      for (Eigen::Index i = 0; i < v->size(); ++i) (*v)(i) = values[k++];
    } else {
      for (const Matrix* cm : ref.parts) {
        auto* m = const_cast<Matrix*>(cm);
        for (Eigen::Index r = 0; r < m->rows(); ++r)
          for (Eigen::Index c = 0; c < m->cols(); ++c) (*m)(r, c) = values[k++];
      }
    }
  }
  if (out.config.tied_embeddings) out.weights.unembedding = out.weights.token_embedding.transpose();
  validate(out.weights, out.config);

  if (std::filesystem::exists(dir / kVocabFile)) {
    try {
      out.vocab = nlohmann::json::parse(read_file(dir / kVocabFile)).get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::malformed_header, std::string("vocab.json: ") + e.what());
    }
    require(out.vocab->size() == out.config.vocab_size, ErrorCode::shape_mismatch,
            "vocab.json length differs from vocab_size");
  }
  out.model_id = model_id_from_files(config_text, manifest_text, blob);
  return out;
}

}  // namespace circuit_lens::io
