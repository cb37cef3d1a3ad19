#pragma once

#include "circuit_lens/error.hpp"
#include "circuit_lens/linalg.hpp"

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

namespace circuit_lens {

struct PrincipalComponent {
  Vector direction;                    // unit norm
  double variance = 0.0;               // eigenvalue of the sample covariance
  double explained_variance_ratio = 0.0;
};

struct PcaOptions {
  double tolerance = 1e-9;             // on ||v_t - v_{t-1}||
  std::size_t max_iterations = 10000;
};

namespace detail {

inline void orthogonalize(Vector& v, const std::vector<PrincipalComponent>& against) {
  // Two passes of modified Gram-Schmidt keep the basis orthonormal to ~1e-16.
  for (int pass = 0; pass < 2; ++pass)
    for (const auto& pc : against) v -= pc.direction.dot(v) * pc.direction;
}

// Fallback when the deflated covariance is numerically zero: the standard
// basis vector least covered by the existing components.
inline Vector least_covered_axis(Eigen::Index dim, const std::vector<PrincipalComponent>& found) {
  Vector best;
  double best_norm = -1.0;
  for (Eigen::Index j = 0; j < dim; ++j) {
    Vector e = Vector::Unit(dim, j);
    orthogonalize(e, found);
    if (e.norm() > best_norm) {
      best_norm = e.norm();
      best = e;
    }
  }
  return best / best.norm();
}

}  // namespace detail

/// Top-k principal components of mean-centred `samples` (rows are samples)
/// by power iteration on the covariance with deflation.
inline std::vector<PrincipalComponent> pca(const Matrix& samples, std::size_t k,
                                           const PcaOptions& options = {}) {
  require(samples.rows() >= 2, ErrorCode::invalid_argument, "pca needs at least 2 samples");
  require(k >= 1 && k <= static_cast<std::size_t>(samples.cols()), ErrorCode::invalid_argument,
          "pca: k must lie in [1, dimension]");
  require(samples.allFinite(), ErrorCode::non_finite, "pca: samples contain NaN or Inf");

  const Eigen::Index dim = samples.cols();
  const RowVector mean = samples.colwise().mean();
  const Matrix centred = samples.rowwise() - mean;
  Matrix cov = centred.transpose() * centred / static_cast<double>(samples.rows() - 1);
  const double total_variance = cov.trace();
  require(total_variance > 0.0, ErrorCode::zero_variance,
          "pca: all samples are identical (zero variance)");

  // Fixed start vector: deterministic, and almost surely not orthogonal to
  // the leading eigenvector.
  std::mt19937_64 rng(0x9ca5eedULL);
  const Vector start = gaussian_vector(dim, 1.0, rng).normalized();
  const double negligible = 1e-13 * total_variance;

  std::vector<PrincipalComponent> out;
  out.reserve(k);
  for (std::size_t c = 0; c < k; ++c) {
    Vector v = start;
    detail::orthogonalize(v, out);
    if (v.norm() < 1e-8) v = detail::least_covered_axis(dim, out);
    v.normalize();

    bool degenerate = false;
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
      Vector w = cov * v;
      detail::orthogonalize(w, out);
      const double norm = w.norm();
      if (norm <= negligible) {
        degenerate = true;
        break;
      }
      w /= norm;
      if (w.dot(v) < 0.0) w = -w;
      const double change = (w - v).norm();
      v = std::move(w);
      if (change < options.tolerance) break;
    }
    if (degenerate) {
      detail::orthogonalize(v, out);
      if (v.norm() < 1e-8) v = detail::least_covered_axis(dim, out);
      v.normalize();
    }

    PrincipalComponent pc;
    pc.direction = v;
    pc.variance = std::max(0.0, v.dot(cov * v));
    pc.explained_variance_ratio = pc.variance / total_variance;
    cov -= pc.variance * (v * v.transpose());
    out.push_back(std::move(pc));
  }
  // Near-degenerate eigenvalues can leave an unconverged component with a
  // slightly smaller Rayleigh quotient than its successor.
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.variance > b.variance;
  });
  return out;
}

}  // namespace circuit_lens
