#pragma once

// Analytic data distributions: isotropic Gaussian / Dirac mixtures with exact
// perturbed densities, scores, denoisers and component posteriors.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "scoreflow/core.hpp"

namespace scoreflow {

struct MixtureComponent {
  double weight = 1.0;
  Vec mean;
  double std = 0.0;  // 0 denotes a Dirac component

  bool operator==(const MixtureComponent&) const = default;
};

class OracleGMM {
 public:
  OracleGMM() = default;

  OracleGMM(std::size_t dim, std::vector<MixtureComponent> components)
      : dim_(dim), components_(std::move(components)) {
    if (dim_ == 0) throw InvalidParameter("OracleGMM: dim must be positive");
    if (components_.empty()) throw InvalidParameter("OracleGMM: at least one component required");
    double total = 0.0;
    for (const auto& c : components_) {
      if (!(c.weight > 0.0)) throw InvalidParameter("OracleGMM: weights must be strictly positive");
      if (c.mean.size() != dim_) throw DimensionMismatch("OracleGMM: component mean has wrong length");
      if (!(c.std >= 0.0) || !std::isfinite(c.std)) throw InvalidParameter("OracleGMM: comp_std must be >= 0");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) throw InvalidParameter("OracleGMM: weights must sum to 1");
  }

  // Same as the constructor but renormalizes the weights first.
  static OracleGMM normalized(std::size_t dim, std::vector<MixtureComponent> components) {
    double total = 0.0;
    for (const auto& c : components) total += c.weight;
    if (!(total > 0.0)) throw InvalidParameter("OracleGMM: weights must be strictly positive");
    for (auto& c : components) c.weight /= total;
    return OracleGMM(dim, std::move(components));
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return components_.size(); }
  const std::vector<MixtureComponent>& components() const { return components_; }
  const MixtureComponent& component(std::size_t k) const { return components_.at(k); }

  bool has_dirac() const {
    return std::any_of(components_.begin(), components_.end(), [](const auto& c) { return c.std == 0.0; });
  }

  Vec mean() const {
    Vec m(dim_, 0.0);
    for (const auto& c : components_)
      for (std::size_t i = 0; i < dim_; ++i) m[i] += c.weight * c.mean[i];
    return m;
  }

  bool operator==(const OracleGMM&) const = default;

 private:
  std::size_t dim_ = 0;
  std::vector<MixtureComponent> components_;
};

namespace detail {

inline void check_query(const OracleGMM& gmm, std::span<const double> x, double sigma, bool density_at_zero) {
  if (x.size() != gmm.dim()) {
    throw DimensionMismatch("gmm: query has length " + std::to_string(x.size()) + ", mixture dim is " +
                            std::to_string(gmm.dim()));
  }
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("gmm: sigma must be finite and >= 0");
  if (density_at_zero && sigma == 0.0 && gmm.has_dirac())
    throw DomainError("gmm: density of a Dirac component at sigma = 0 is undefined");
}

// log(w_k) + log N(x; mu_k, (std_k^2 + sigma^2) I) for every component.
inline Vec component_log_terms(const OracleGMM& gmm, std::span<const double> x, double sigma) {
  const double d = static_cast<double>(gmm.dim());
  Vec terms;
  terms.reserve(gmm.size());
  for (const auto& c : gmm.components()) {
    const double var = c.std * c.std + sigma * sigma;
    terms.push_back(std::log(c.weight) - 0.5 * d * std::log(var) - d * kLogSqrt2Pi -
                    0.5 * squared_distance(x, c.mean) / var);
  }
  return terms;
}

inline Vec softmax(const Vec& log_terms) {
  const double lse = log_sum_exp(log_terms);
  Vec r(log_terms.size());
  for (std::size_t k = 0; k < r.size(); ++k) r[k] = std::exp(log_terms[k] - lse);
  return r;
}

}  // namespace detail

/// Log density of the data distribution convolved with N(0, sigma^2 I).
inline double gmm_log_density(const OracleGMM& gmm, std::span<const double> x, double sigma) {
  detail::check_query(gmm, x, sigma, true);
  return log_sum_exp(detail::component_log_terms(gmm, x, sigma));
}

/// p(component k | x) under the perturbed mixture.
inline Vec gmm_component_posterior(const OracleGMM& gmm, std::span<const double> x, double sigma) {
  detail::check_query(gmm, x, sigma, true);
  return detail::softmax(detail::component_log_terms(gmm, x, sigma));
}

/// Exact score: sum_k r_k (mu_k - x) / (std_k^2 + sigma^2).
inline Vec gmm_score(const OracleGMM& gmm, std::span<const double> x, double sigma) {
  detail::check_query(gmm, x, sigma, true);
  const Vec r = detail::softmax(detail::component_log_terms(gmm, x, sigma));
  Vec s(gmm.dim(), 0.0);
  for (std::size_t k = 0; k < gmm.size(); ++k) {
    const auto& c = gmm.component(k);
    const double coef = r[k] / (c.std * c.std + sigma * sigma);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += coef * (c.mean[i] - x[i]);
  }
  return s;
}

/// Posterior mean E[x0 | x] = x + sigma^2 * score; the input itself at sigma = 0.
inline Vec gmm_denoise(const OracleGMM& gmm, std::span<const double> x, double sigma) {
  detail::check_query(gmm, x, sigma, false);
  if (sigma == 0.0) return Vec(x.begin(), x.end());
  const Vec s = gmm_score(gmm, x, sigma);
  return axpby(1.0, x, sigma * sigma, s);
}

/// Mixture restricted to a subset of components, weights renormalized.
inline OracleGMM conditional_restrict(const OracleGMM& gmm, std::span<const std::size_t> labels) {
  if (labels.empty()) throw EmptySelection("conditional_restrict: empty label set");
  std::vector<std::size_t> sorted(labels.begin(), labels.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<MixtureComponent> kept;
  for (std::size_t k : sorted) {
    if (k >= gmm.size()) throw EmptySelection("conditional_restrict: label " + std::to_string(k) + " out of range");
    kept.push_back(gmm.component(k));
  }
  return OracleGMM::normalized(gmm.dim(), std::move(kept));
}

inline OracleGMM conditional_restrict(const OracleGMM& gmm, std::size_t label) {
  const std::size_t one[] = {label};
  return conditional_restrict(gmm, std::span<const std::size_t>(one));
}

/// Gradient of log p(label | x) under the perturbed mixture, i.e. the
/// exact classifier gradient: score of the component minus the marginal score.
inline Vec gmm_log_posterior_grad(const OracleGMM& gmm, std::size_t label, std::span<const double> x, double sigma) {
  const Vec full = gmm_score(gmm, x, sigma);
  const Vec cond = gmm_score(conditional_restrict(gmm, label), x, sigma);
  return axpby(1.0, cond, -1.0, full);
}

/// Law of x0 given y = x0 + sigma_obs * n: each component is updated by the
/// conjugate Gaussian rule and reweighted by its evidence for y.
inline OracleGMM gmm_observation_posterior(const OracleGMM& gmm, std::span<const double> y, double sigma_obs) {
  if (!(sigma_obs > 0.0) || !std::isfinite(sigma_obs)) throw DomainError("gmm_observation_posterior: sigma_obs must be > 0");
  const Vec w = gmm_component_posterior(gmm, y, sigma_obs);
  const double o2 = sigma_obs * sigma_obs;
  std::vector<MixtureComponent> comps;
  for (std::size_t k = 0; k < gmm.size(); ++k) {
    const auto& c = gmm.component(k);
    if (w[k] <= 0.0) continue;
    const double s2 = c.std * c.std;
    comps.push_back({w[k], axpby(o2 / (s2 + o2), c.mean, s2 / (s2 + o2), y), c.std * sigma_obs / std::sqrt(s2 + o2)});
  }
  return OracleGMM::normalized(gmm.dim(), std::move(comps));
}

/// i.i.d. draws with the component index of each draw.
struct LabeledSamples {
  std::vector<Vec> points;
  std::vector<std::size_t> labels;
};

inline LabeledSamples gmm_sample_labeled(const OracleGMM& gmm, Rng& rng, std::size_t n) {
  Vec cdf;
  double acc = 0.0;
  for (const auto& c : gmm.components()) cdf.push_back(acc += c.weight);
  LabeledSamples out;
  out.points.reserve(n);
  out.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t k = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    k = std::min(k, gmm.size() - 1);
    const auto& c = gmm.component(k);
    Vec x(c.mean);
    if (c.std > 0.0)
      for (auto& e : x) e += c.std * rng.normal();
    out.points.push_back(std::move(x));
    out.labels.push_back(k);
  }
  return out;
}

inline std::vector<Vec> gmm_sample(const OracleGMM& gmm, Rng& rng, std::size_t n) {
  return gmm_sample_labeled(gmm, rng, n).points;
}

/// x0 + sigma * n with n ~ N(0, I).
inline Vec perturb(std::span<const double> x0, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw DomainError("perturb: sigma must be >= 0");
  Vec x(x0.begin(), x0.end());
  if (sigma == 0.0) return x;
  for (auto& e : x) e += sigma * rng.normal();
  return x;
}

// ---------------------------------------------------------------------------
// Standard distributions used across tests and the harness
// ---------------------------------------------------------------------------

// 2-D, three components with means on the unit circle, std 0.15.
inline OracleGMM benchmark_gmm() {
  std::vector<MixtureComponent> comps;
  for (int k = 0; k < 3; ++k) {
    const double a = 2.0 * kPi * k / 3.0 + kPi / 2.0;
    comps.push_back({1.0 / 3.0, {std::cos(a), std::sin(a)}, 0.15});
  }
  return OracleGMM::normalized(2, std::move(comps));
}

// 2-D, two equal components at (+-1, 0), std 0.2.
inline OracleGMM two_component_gmm() {
  return OracleGMM(2, {{0.5, {-1.0, 0.0}, 0.2}, {0.5, {1.0, 0.0}, 0.2}});
}

// 1-D Dirac pair at +-1.
inline OracleGMM two_peak_dirac() { return OracleGMM(1, {{0.5, {-1.0}, 0.0}, {0.5, {1.0}, 0.0}}); }

inline OracleGMM single_gaussian(const Vec& mean, double std) { return OracleGMM(mean.size(), {{1.0, mean, std}}); }

inline OracleGMM dirac(const Vec& at) { return OracleGMM(at.size(), {{1.0, at, 0.0}}); }

}  // namespace scoreflow
