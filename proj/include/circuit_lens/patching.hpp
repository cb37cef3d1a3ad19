#pragma once

#include "circuit_lens/error.hpp"
#include "circuit_lens/forward.hpp"
#include "circuit_lens/grammar.hpp"
#include "circuit_lens/hooks.hpp"
#include "circuit_lens/parallel.hpp"

#include <span>
#include <string>
#include <vector>

namespace circuit_lens {

enum class PatchFamily { resid_pre_grid, attn_out_grid, mlp_out_grid, head_out_last_pos };

inline std::string to_string(PatchFamily f) {
  switch (f) {
    case PatchFamily::resid_pre_grid: return "resid_pre_grid";
    case PatchFamily::attn_out_grid: return "attn_out_grid";
    case PatchFamily::mlp_out_grid: return "mlp_out_grid";
    case PatchFamily::head_out_last_pos: return "head_out_last_pos";
  }
  return "unknown";
}

inline PatchFamily patch_family_from_string(const std::string& s) {
  for (auto f : {PatchFamily::resid_pre_grid, PatchFamily::attn_out_grid,
                 PatchFamily::mlp_out_grid, PatchFamily::head_out_last_pos}) {
    if (to_string(f) == s) return f;
  }
  throw Error(ErrorCode::invalid_argument, "unknown patch family '" + s + "'");
}

/// Layer x position (or layer x head) patching results averaged over a
/// dataset. raw is the patched logit diff, delta subtracts the corrupted
/// baseline, normalized divides that by the clean-corrupted gap per pair.
struct PatchGrid {
  PatchFamily family = PatchFamily::resid_pre_grid;
  Matrix values_raw;
  Matrix values_delta;
  Matrix values_normalized;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  double mean_clean_ld = 0.0;
  double mean_corrupted_ld = 0.0;
};

struct BaselineLogitDiffs {
  std::vector<double> clean;
  std::vector<double> corrupted;
  double mean_clean = 0.0;
  double mean_corrupted = 0.0;
};

namespace detail {

inline void check_pair_shape(const ContrastivePair& pair) {
  require(pair.clean.size() == pair.corrupted.size(), ErrorCode::incompatible_shapes,
          "clean and corrupted sequences differ in length");
}

/// Corrupted run with each target overwritten by its value in `clean_cache`.
inline double patched_logit_diff(const ModelWeights& weights, const ModelConfig& config,
                                 const ContrastivePair& pair, const ActivationCache& clean_cache,
                                 std::span<const HookPoint> targets) {
  std::vector<Intervention> ivs;
  ivs.reserve(targets.size());
  for (const auto& t : targets) {
    validate(t, config, pair.corrupted.size());
    ivs.push_back(Intervention::set(t, clean_cache.value(t)));
  }
  return last_logit_diff(forward(weights, config, pair.corrupted, ivs), pair.g, pair.b);
}

}  // namespace detail

/// Denoising patch of several nodes at once (e.g. a layer at every position).
inline double patch_run(const ModelWeights& weights, const ModelConfig& config,
                        const ContrastivePair& pair, std::span<const HookPoint> targets) {
  detail::check_pair_shape(pair);
  for (const auto& t : targets) validate(t, config, pair.corrupted.size());
  const auto clean = forward(weights, config, pair.clean);
  return detail::patched_logit_diff(weights, config, pair, clean.cache, targets);
}

/// Logit diff of the corrupted run with `target` set to its clean-run value.
inline double patch_run(const ModelWeights& weights, const ModelConfig& config,
                        const ContrastivePair& pair, const HookPoint& target) {
  return patch_run(weights, config, pair, std::span<const HookPoint>(&target, 1));
}

inline BaselineLogitDiffs baseline_logit_diffs(const ModelWeights& weights,
                                               const ModelConfig& config,
                                               std::span<const ContrastivePair> pairs,
                                               std::size_t threads = 0) {
  BaselineLogitDiffs out;
  out.clean.resize(pairs.size());
  out.corrupted.resize(pairs.size());
  parallel_for(
      pairs.size(),
      [&](std::size_t i) {
        const auto& p = pairs[i];
        detail::check_pair_shape(p);
        out.clean[i] = last_logit_diff(forward(weights, config, p.clean), p.g, p.b);
        out.corrupted[i] = last_logit_diff(forward(weights, config, p.corrupted), p.g, p.b);
      },
      threads);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out.mean_clean += out.clean[i];
    out.mean_corrupted += out.corrupted[i];
  }
  if (!pairs.empty()) {
    out.mean_clean /= static_cast<double>(pairs.size());
    out.mean_corrupted /= static_cast<double>(pairs.size());
  }
  return out;
}

/// Grid axes for `family`: row count, column count.
inline std::pair<std::size_t, std::size_t> grid_shape(PatchFamily family,
                                                      const ModelConfig& config,
                                                      std::size_t seq_len) {
  return {config.n_layers,
          family == PatchFamily::head_out_last_pos ? config.n_heads : seq_len};
}

inline HookPoint grid_cell_hook(PatchFamily family, std::size_t row, std::size_t col,
                                std::size_t seq_len) {
  switch (family) {
    case PatchFamily::resid_pre_grid: return HookPoint::resid_pre(row, col);
    case PatchFamily::attn_out_grid: return HookPoint::attn_out(row, col);
    case PatchFamily::mlp_out_grid: return HookPoint::mlp_out(row, col);
    case PatchFamily::head_out_last_pos: return HookPoint::head_out(row, col, seq_len - 1);
  }
  throw Error(ErrorCode::invalid_argument, "unknown patch family");
}

/// Patches every cell of `family` on every pair. Cells are evaluated in
/// parallel; each cell sums its pairs in dataset order, so the result is the
/// same for any thread count.
inline PatchGrid compute_grid(const ModelWeights& weights, const ModelConfig& config,
                              std::span<const ContrastivePair> pairs, PatchFamily family,
                              std::size_t threads = 0) {
  require(!pairs.empty(), ErrorCode::invalid_argument, "compute_grid needs a nonempty dataset");
  const std::size_t seq_len = pairs.front().clean.size();
  for (const auto& p : pairs) {
    detail::check_pair_shape(p);
    require(p.clean.size() == seq_len, ErrorCode::incompatible_shapes,
            "dataset pairs have different lengths");
  }

  std::vector<ActivationCache> clean_caches(pairs.size());
  std::vector<double> clean_ld(pairs.size());
  std::vector<double> corrupted_ld(pairs.size());
  parallel_for(
      pairs.size(),
      [&](std::size_t i) {
        auto clean = forward(weights, config, pairs[i].clean);
        clean_ld[i] = last_logit_diff(clean, pairs[i].g, pairs[i].b);
        clean_caches[i] = std::move(clean.cache);
        corrupted_ld[i] =
            last_logit_diff(forward(weights, config, pairs[i].corrupted), pairs[i].g, pairs[i].b);
      },
      threads);

  const auto [rows, cols] = grid_shape(family, config, seq_len);
  PatchGrid grid;
  grid.family = family;
  grid.values_raw = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  grid.values_delta = grid.values_raw;
  grid.values_normalized = grid.values_raw;

  const double n = static_cast<double>(pairs.size());
  parallel_for(
      rows * cols,
      [&](std::size_t cell) {
        const std::size_t r = cell / cols;
        const std::size_t c = cell % cols;
        const HookPoint hook = grid_cell_hook(family, r, c, seq_len);
        double raw = 0.0, delta = 0.0, normalized = 0.0;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          const double patched = detail::patched_logit_diff(
              weights, config, pairs[i], clean_caches[i], std::span<const HookPoint>(&hook, 1));
          const double gap = clean_ld[i] - corrupted_ld[i];
          raw += patched;
          delta += patched - corrupted_ld[i];
          normalized += gap != 0.0 ? (patched - corrupted_ld[i]) / gap : 0.0;
        }
        const auto er = static_cast<Eigen::Index>(r);
        const auto ec = static_cast<Eigen::Index>(c);
        grid.values_raw(er, ec) = raw / n;
        grid.values_delta(er, ec) = delta / n;
        grid.values_normalized(er, ec) = normalized / n;
      },
      threads);

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    grid.mean_clean_ld += clean_ld[i];
    grid.mean_corrupted_ld += corrupted_ld[i];
  }
  grid.mean_clean_ld /= n;
  grid.mean_corrupted_ld /= n;

  for (std::size_t r = 0; r < rows; ++r) grid.row_labels.push_back("L" + std::to_string(r));
  const auto& labels = pairs.front().token_labels;
  for (std::size_t c = 0; c < cols; ++c) {
    if (family == PatchFamily::head_out_last_pos)
      grid.col_labels.push_back("H" + std::to_string(c));
    else if (labels.size() == seq_len)
      grid.col_labels.push_back(std::to_string(c) + ":" + labels[c]);
    else
      grid.col_labels.push_back("pos" + std::to_string(c));
  }
  return grid;
}

/// (row, col) of the largest entry of `values`; ties go to the first in
/// row-major order.
inline std::pair<std::size_t, std::size_t> argmax_cell(const Matrix& values) {
  Eigen::Index br = 0, bc = 0;
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    for (Eigen::Index c = 0; c < values.cols(); ++c)
      if (values(r, c) > values(br, bc)) {
        br = r;
        bc = c;
      }
  return {static_cast<std::size_t>(br), static_cast<std::size_t>(bc)};
}

}  // namespace circuit_lens
