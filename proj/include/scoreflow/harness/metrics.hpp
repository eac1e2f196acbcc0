#pragma once

// Sample-based distances used in place of dataset-level metrics.

#include <algorithm>
#include <cmath>
#include <vector>

#include "scoreflow/core.hpp"
#include "scoreflow/oracle.hpp"

namespace scoreflow {

/// Exact 2-Wasserstein distance between two 1-D empirical distributions.
/// Equal counts reduce to sorted pairing; unequal counts integrate the
/// difference of the two quantile step functions over their merged breakpoints.
inline double metric_w2_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InvalidParameter("metric_w2_1d: empty sample set");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t n = a.size(), m = b.size();
  double total = 0.0;
  if (n == m) {
    for (std::size_t i = 0; i < n; ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(total / static_cast<double>(n));
  }
  // Walk the merged grid {i/n} U {j/m} using integer cross-multiplication to stay exact.
  std::size_t i = 0, j = 0;
  std::size_t prev = 0;  // position on the common grid of size n*m
  while (i < n && j < m) {
    const std::size_t next_a = (i + 1) * m, next_b = (j + 1) * n;
    const std::size_t next = std::min(next_a, next_b);
    const double d = a[i] - b[j];
    total += d * d * static_cast<double>(next - prev);
    prev = next;
    if (next_a == next) ++i;
    if (next_b == next) ++j;
  }
  return std::sqrt(total / (static_cast<double>(n) * static_cast<double>(m)));
}

inline std::vector<double> project(const std::vector<Vec>& points, std::span<const double> dir) {
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(dot(p, dir));
  return out;
}

inline std::size_t common_dim(const std::vector<Vec>& a, const std::vector<Vec>& b, const char* where) {
  if (a.empty() || b.empty()) throw InvalidParameter(std::string(where) + ": empty sample set");
  const std::size_t d = a.front().size();
  for (const auto& p : a)
    if (p.size() != d) throw DimensionMismatch(std::string(where) + ": ragged samples");
  for (const auto& p : b)
    if (p.size() != d) throw DimensionMismatch(std::string(where) + ": dimension mismatch");
  return d;
}

/// Mean of metric_w2_1d over random unit directions.
inline double metric_sliced_w2(const std::vector<Vec>& a, const std::vector<Vec>& b, std::size_t n_projections, Rng& rng) {
  const std::size_t d = common_dim(a, b, "metric_sliced_w2");
  if (n_projections == 0) throw InvalidParameter("metric_sliced_w2: n_projections must be >= 1");
  double total = 0.0;
  for (std::size_t k = 0; k < n_projections; ++k) {
    Vec dir;
    double len = 0.0;
    do {
      dir = rng.normal_vec(d);
      len = norm(dir);
    } while (len == 0.0);
    for (auto& v : dir) v /= len;
    total += metric_w2_1d(project(a, dir), project(b, dir));
  }
  return total / static_cast<double>(n_projections);
}

struct SampleMoments {
  Vec mean;
  std::vector<Vec> cov;  // population covariance
};

/// Two-pass mean and covariance.
inline SampleMoments sample_moments(const std::vector<Vec>& a) {
  if (a.empty()) throw InvalidParameter("sample_moments: empty sample set");
  const std::size_t d = a.front().size();
  SampleMoments m{Vec(d, 0.0), std::vector<Vec>(d, Vec(d, 0.0))};
  for (const auto& p : a)
    for (std::size_t i = 0; i < d; ++i) m.mean[i] += p[i];
  for (auto& v : m.mean) v /= static_cast<double>(a.size());
  for (const auto& p : a)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) m.cov[i][j] += (p[i] - m.mean[i]) * (p[j] - m.mean[j]);
  for (auto& row : m.cov)
    for (auto& v : row) v /= static_cast<double>(a.size());
  return m;
}

struct MomentErrors {
  double mean_err = 0.0;  // L2 distance of means
  double cov_err = 0.0;   // Frobenius norm of the covariance difference
};

inline MomentErrors metric_moments(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  const std::size_t d = common_dim(a, b, "metric_moments");
  const SampleMoments ma = sample_moments(a), mb = sample_moments(b);
  double fro = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) fro += (ma.cov[i][j] - mb.cov[i][j]) * (ma.cov[i][j] - mb.cov[i][j]);
  return {l2_distance(ma.mean, mb.mean), std::sqrt(fro)};
}

/// Fraction of samples whose nearest component mean is component k.
inline Vec mode_mass(const OracleGMM& gmm, const std::vector<Vec>& samples) {
  if (samples.empty()) throw InvalidParameter("mode_mass: empty sample set");
  Vec mass(gmm.size(), 0.0);
  for (const auto& p : samples) {
    std::size_t best = 0;
    double best_d = squared_distance(p, gmm.component(0).mean);
    for (std::size_t k = 1; k < gmm.size(); ++k) {
      const double dk = squared_distance(p, gmm.component(k).mean);
      if (dk < best_d) best = k, best_d = dk;
    }
    mass[best] += 1.0;
  }
  for (auto& v : mass) v /= static_cast<double>(samples.size());
  return mass;
}

/// Total-variation distance between the mode masses of two sample sets.
inline double metric_mode_mass(const OracleGMM& gmm, const std::vector<Vec>& a, const std::vector<Vec>& b) {
  const Vec pa = mode_mass(gmm, a), pb = mode_mass(gmm, b);
  double tv = 0.0;
  for (std::size_t k = 0; k < pa.size(); ++k) tv += std::abs(pa[k] - pb[k]);
  return 0.5 * tv;
}

}  // namespace scoreflow
