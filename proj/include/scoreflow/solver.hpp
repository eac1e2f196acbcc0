#pragma once

// Deterministic PF-ODE integrators in the EDM frame (s = 1, sigma = t),
// the reverse-SDE Euler-Maruyama baseline, guidance wrapping and
// initialization helpers.

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "scoreflow/core.hpp"
#include "scoreflow/oracle.hpp"
#include "scoreflow/param.hpp"
#include "scoreflow/schedule.hpp"

namespace scoreflow {

/// A denoiser plus an evaluation counter. Copies carry their own counter, so
/// concurrent solves should each hold a copy.
class DenoiserHandle {
 public:
  // Number of model evaluations one call costs at the given sigma.
  using CostFn = std::function<std::uint64_t(double sigma)>;

  DenoiserHandle() = default;
  explicit DenoiserHandle(DenoiserFn fn, CostFn cost = {}) : fn_(std::move(fn)), cost_(std::move(cost)) {}

  Vec evaluate(std::span<const double> x, double sigma) const {
    nfe_ += cost(sigma);
    return fn_(x, sigma);
  }
  Vec operator()(std::span<const double> x, double sigma) const { return evaluate(x, sigma); }

  std::uint64_t cost(double sigma) const { return cost_ ? cost_(sigma) : 1; }
  std::uint64_t nfe() const { return nfe_; }
  void reset_nfe() { nfe_ = 0; }
  const DenoiserFn& fn() const { return fn_; }
  explicit operator bool() const { return static_cast<bool>(fn_); }

 private:
  DenoiserFn fn_;
  CostFn cost_;
  mutable std::uint64_t nfe_ = 0;
};

struct TrajectoryRecord {
  double sigma;
  Vec x;
  std::optional<Vec> denoised;
};

struct Trajectory {
  std::vector<TrajectoryRecord> records;
};

struct SolveResult {
  Vec x;
  std::uint64_t nfe = 0;
};

enum class SamplerKind { euler, heun, dpmpp, unipc, sde };

inline std::string_view to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::euler: return "euler";
    case SamplerKind::heun: return "heun";
    case SamplerKind::dpmpp: return "dpmpp";
    case SamplerKind::unipc: return "unipc";
    case SamplerKind::sde: return "sde";
  }
  return "?";
}

inline std::optional<SamplerKind> parse_sampler_kind(std::string_view s) {
  if (s == "euler") return SamplerKind::euler;
  if (s == "heun") return SamplerKind::heun;
  if (s == "dpmpp") return SamplerKind::dpmpp;
  if (s == "unipc") return SamplerKind::unipc;
  if (s == "sde") return SamplerKind::sde;
  return std::nullopt;
}

namespace detail {

inline void check_step(std::span<const double> x, const char* solver, std::size_t step) {
  if (!all_finite(x)) throw NumericalDivergence(solver, step);
}

inline void record(Trajectory* trace, double sigma, std::span<const double> x, const Vec* d = nullptr) {
  if (!trace) return;
  trace->records.push_back({sigma, Vec(x.begin(), x.end()), d ? std::optional<Vec>(*d) : std::nullopt});
}

inline void check_grid(const StepGrid& grid, std::span<const double> x_T) {
  if (!all_finite(x_T)) throw DomainError("solver: x_T must be finite");
  if (grid.sigmas.size() >= 2 && grid.sigmas.back() != 0.0) throw InvalidRange("solver: grid must end with 0");
}

// e^{-h} sum_{m > k} h^m / m!, i.e. 1 - e^{-h} sum_{m <= k} h^m / m!, without cancellation.
inline double poisson_tail(int k, double h) {
  if (h > 1.0) {
    double term = 1.0, partial = 1.0;
    for (int m = 1; m <= k; ++m) partial += (term *= h / m);
    return 1.0 - std::exp(-h) * partial;
  }
  double term = 1.0;
  for (int m = 1; m <= k; ++m) term *= h / m;
  double sum = 0.0;
  for (int m = k + 1; m < k + 60; ++m) {
    term *= h / m;
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return std::exp(-h) * sum;
}

}  // namespace detail

/// Weights w_j with  integral_{lam_from}^{lam_to} e^{lam - lam_to} P(lam) dlam = sum_j w_j D_j,
/// P being the Lagrange interpolant through (nodes[j], D_j).
inline Vec exponential_integrator_weights(std::span<const double> nodes, double lam_from, double lam_to) {
  const std::size_t n = nodes.size();
  if (n == 0 || n > 8) throw InvalidParameter("exponential_integrator_weights: need 1..8 nodes");
  const double h = lam_to - lam_from;
  // I_k = integral_{-h}^{0} e^u u^k du = (-1)^k k! * poisson_tail(k, h)
  Vec moments(n);
  double fact = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0) fact *= static_cast<double>(k);
    moments[k] = ((k % 2) ? -fact : fact) * detail::poisson_tail(static_cast<int>(k), h);
  }
  Vec u(n);
  for (std::size_t j = 0; j < n; ++j) u[j] = nodes[j] - lam_to;

  Vec weights(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    // Coefficients of prod_{m != j} (u - u_m) / (u_j - u_m), lowest degree first.
    Vec coef{1.0};
    double denom = 1.0;
    for (std::size_t m = 0; m < n; ++m) {
      if (m == j) continue;
      Vec next(coef.size() + 1, 0.0);
      for (std::size_t k = 0; k < coef.size(); ++k) {
        next[k] -= u[m] * coef[k];
        next[k + 1] += coef[k];
      }
      coef = std::move(next);
      denom *= u[j] - u[m];
    }
    double w = 0.0;
    for (std::size_t k = 0; k < coef.size(); ++k) w += coef[k] * moments[k];
    weights[j] = w / denom;
  }
  return weights;
}

/// First-order Euler on dx/dsigma = (x - D(x, sigma)) / sigma. NFE = N.
inline SolveResult euler_solve(const DenoiserHandle& denoiser, const StepGrid& grid, std::span<const double> x_T,
                               Trajectory* trace = nullptr) {
  detail::check_grid(grid, x_T);
  const std::uint64_t nfe0 = denoiser.nfe();
  Vec x(x_T.begin(), x_T.end());
  for (std::size_t i = 0; i + 1 < grid.sigmas.size(); ++i) {
    const double s = grid.sigmas[i], s_next = grid.sigmas[i + 1];
    const Vec d = denoiser(x, s);
    detail::record(trace, s, x, &d);
    for (std::size_t k = 0; k < x.size(); ++k) x[k] += (s_next - s) * ((x[k] - d[k]) / s);
    detail::check_step(x, "euler", i);
  }
  if (!grid.sigmas.empty()) detail::record(trace, grid.sigmas.back(), x);
  return {std::move(x), denoiser.nfe() - nfe0};
}

/// Heun's second-order method; the correction is skipped on the step to sigma = 0. NFE = 2N - 1.
inline SolveResult heun_solve(const DenoiserHandle& denoiser, const StepGrid& grid, std::span<const double> x_T,
                              Trajectory* trace = nullptr) {
  detail::check_grid(grid, x_T);
  const std::uint64_t nfe0 = denoiser.nfe();
  Vec x(x_T.begin(), x_T.end());
  const std::size_t dim = x.size();
  for (std::size_t i = 0; i + 1 < grid.sigmas.size(); ++i) {
    const double s = grid.sigmas[i], s_next = grid.sigmas[i + 1], dt = s_next - s;
    const Vec d = denoiser(x, s);
    detail::record(trace, s, x, &d);
    Vec slope(dim), x_pred(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      slope[k] = (x[k] - d[k]) / s;
      x_pred[k] = x[k] + dt * slope[k];
    }
    if (s_next > 0.0) {
      const Vec d_next = denoiser(x_pred, s_next);
      for (std::size_t k = 0; k < dim; ++k) x[k] += dt * 0.5 * (slope[k] + (x_pred[k] - d_next[k]) / s_next);
    } else {
      x = std::move(x_pred);
    }
    detail::check_step(x, "heun", i);
  }
  if (!grid.sigmas.empty()) detail::record(trace, grid.sigmas.back(), x);
  return {std::move(x), denoiser.nfe() - nfe0};
}

namespace detail {

struct HistoryEntry {
  double lambda;
  Vec denoised;
};

// x_next = (sigma_next / sigma) x + sum_j w_j D_j over the given history entries.
inline Vec ei_step(std::span<const double> x, double sigma, double sigma_next,
                   const std::vector<const HistoryEntry*>& points) {
  Vec nodes;
  for (const auto* p : points) nodes.push_back(p->lambda);
  const Vec w = exponential_integrator_weights(nodes, -std::log(sigma), -std::log(sigma_next));
  Vec out = scaled(x, sigma_next / sigma);
  for (std::size_t j = 0; j < points.size(); ++j)
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += w[j] * points[j]->denoised[k];
  return out;
}

inline std::vector<const HistoryEntry*> last_entries(const std::deque<HistoryEntry>& history, std::size_t count) {
  std::vector<const HistoryEntry*> out;
  const std::size_t n = std::min(count, history.size());
  for (std::size_t j = history.size() - n; j < history.size(); ++j) out.push_back(&history[j]);
  return out;
}

}  // namespace detail

/// DPM-Solver++ style multistep exponential integrator of order 1..3 in
/// lambda = -ln sigma. The polynomial through the most recent denoiser values is
/// integrated in closed form; order ramps up during warm-up. The final step to
/// sigma = 0 returns the last denoiser value. NFE = N.
inline SolveResult dpmpp_solve(const DenoiserHandle& denoiser, const StepGrid& grid, std::span<const double> x_T,
                               int order, Trajectory* trace = nullptr) {
  if (order < 1 || order > 3) throw InvalidParameter("dpmpp_solve: order must be 1, 2 or 3");
  detail::check_grid(grid, x_T);
  const std::uint64_t nfe0 = denoiser.nfe();
  Vec x(x_T.begin(), x_T.end());
  std::deque<detail::HistoryEntry> history;
  for (std::size_t i = 0; i + 1 < grid.sigmas.size(); ++i) {
    const double s = grid.sigmas[i], s_next = grid.sigmas[i + 1];
    Vec d = denoiser(x, s);
    detail::record(trace, s, x, &d);
    if (s_next == 0.0) {
      x = std::move(d);
    } else {
      history.push_back({-std::log(s), std::move(d)});
      if (history.size() > static_cast<std::size_t>(order)) history.pop_front();
      x = detail::ei_step(x, s, s_next, detail::last_entries(history, order));
    }
    detail::check_step(x, "dpmpp", i);
  }
  if (!grid.sigmas.empty()) detail::record(trace, grid.sigmas.back(), x);
  return {std::move(x), denoiser.nfe() - nfe0};
}

/// UniPC-style predictor-corrector of order 2..4. The predictor is the
/// exponential-integrator multistep of order p - 1; after evaluating D at the
/// predicted point the step is recomputed with that node added to the
/// interpolation set, and the evaluation is reused as history. The final
/// step evaluates D at the corrected point and returns it. NFE = N + 1.
inline SolveResult unipc_solve(const DenoiserHandle& denoiser, const StepGrid& grid, std::span<const double> x_T,
                               int order, Trajectory* trace = nullptr) {
  if (order < 2 || order > 4) throw InvalidParameter("unipc_solve: order must be 2, 3 or 4");
  detail::check_grid(grid, x_T);
  const std::uint64_t nfe0 = denoiser.nfe();
  Vec x(x_T.begin(), x_T.end());
  const std::size_t predictor_points = static_cast<std::size_t>(order - 1);
  std::deque<detail::HistoryEntry> history;
  if (grid.sigmas.size() >= 2) history.push_back({-std::log(grid.sigmas[0]), denoiser(x, grid.sigmas[0])});

  for (std::size_t i = 0; i + 1 < grid.sigmas.size(); ++i) {
    const double s = grid.sigmas[i], s_next = grid.sigmas[i + 1];
    if (s_next == 0.0) {
      Vec d = denoiser(x, s);
      detail::record(trace, s, x, &d);
      x = std::move(d);
      detail::check_step(x, "unipc", i);
      break;
    }
    detail::record(trace, s, x, &history.back().denoised);
    auto points = detail::last_entries(history, predictor_points);
    const Vec x_pred = detail::ei_step(x, s, s_next, points);
    detail::check_step(x_pred, "unipc", i);

    detail::HistoryEntry fresh{-std::log(s_next), denoiser(x_pred, s_next)};
    points.push_back(&fresh);
    x = detail::ei_step(x, s, s_next, points);
    detail::check_step(x, "unipc", i);

    history.push_back(std::move(fresh));
    while (history.size() > predictor_points) history.pop_front();
  }
  if (!grid.sigmas.empty()) detail::record(trace, grid.sigmas.back(), x);
  return {std::move(x), denoiser.nfe() - nfe0};
}

struct SdeOptions {
  double drift_scale = 1.0;
  double noise_scale = 1.0;
};

/// Reverse-time SDE with f = 0, g(t) = sqrt(2t):
/// x_{i+1} = x_i - 2 sigma_i s(x_i, sigma_i) D + sqrt(2 sigma_i) sqrt(-D) n, D = sigma_{i+1} - sigma_i.
/// The score comes from the denoiser: s = (D(x, sigma) - x) / sigma^2.
inline SolveResult sde_euler_maruyama(const DenoiserHandle& denoiser, const StepGrid& grid,
                                      std::span<const double> x_T, Rng& rng, SdeOptions opts = {},
                                      Trajectory* trace = nullptr) {
  detail::check_grid(grid, x_T);
  const std::uint64_t nfe0 = denoiser.nfe();
  Vec x(x_T.begin(), x_T.end());
  for (std::size_t i = 0; i + 1 < grid.sigmas.size(); ++i) {
    const double s = grid.sigmas[i], delta = grid.sigmas[i + 1] - s;
    const Vec d = denoiser(x, s);
    detail::record(trace, s, x, &d);
    const double noise = opts.noise_scale * std::sqrt(2.0 * s) * std::sqrt(-delta);
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double score = (d[k] - x[k]) / (s * s);
      x[k] += -opts.drift_scale * 2.0 * s * score * delta;
      if (opts.noise_scale != 0.0) x[k] += noise * rng.normal();
    }
    detail::check_step(x, "sde", i);
  }
  if (!grid.sigmas.empty()) detail::record(trace, grid.sigmas.back(), x);
  return {std::move(x), denoiser.nfe() - nfe0};
}

struct SolverSpec {
  SamplerKind kind = SamplerKind::dpmpp;
  int order = 3;
};

/// Dispatch on sampler kind. `rng` is only consulted by the SDE sampler.
inline SolveResult solve(const SolverSpec& spec, const DenoiserHandle& denoiser, const StepGrid& grid,
                         std::span<const double> x_T, Rng* rng = nullptr, Trajectory* trace = nullptr) {
  switch (spec.kind) {
    case SamplerKind::euler: return euler_solve(denoiser, grid, x_T, trace);
    case SamplerKind::heun: return heun_solve(denoiser, grid, x_T, trace);
    case SamplerKind::dpmpp: return dpmpp_solve(denoiser, grid, x_T, spec.order, trace);
    case SamplerKind::unipc: return unipc_solve(denoiser, grid, x_T, spec.order, trace);
    case SamplerKind::sde:
      if (!rng) throw InvalidParameter("solve: the SDE sampler needs an rng");
      return sde_euler_maruyama(denoiser, grid, x_T, *rng, {}, trace);
  }
  throw InvalidParameter("solve: unknown sampler");
}

/// Model evaluations one solve costs on an N-step grid (without guidance).
inline std::uint64_t expected_nfe(const SolverSpec& spec, std::size_t steps) {
  switch (spec.kind) {
    case SamplerKind::heun: return steps == 0 ? 0 : 2 * steps - 1;
    case SamplerKind::unipc: return steps == 0 ? 0 : steps + 1;
    default: return steps;
  }
}

// ---------------------------------------------------------------------------
// Guidance
// ---------------------------------------------------------------------------

/// Gradient of log q(y | x) at noise level sigma.
using ClassifierGradFn = std::function<Vec(std::span<const double> x, double sigma)>;

using GuidanceAux = std::variant<std::monostate, DenoiserHandle, ClassifierGradFn>;

/// cfg: `base` is the conditional model and `aux` the unconditional handle.
/// classifier: `base` is the unconditional model and `aux` the classifier gradient.
/// Guidance applies for sigma in [sigma_lo, sigma_hi]; elsewhere `base` passes through.
inline DenoiserHandle guided_denoiser(const DenoiserHandle& base, const GuidanceSpec& spec, GuidanceAux aux = {}) {
  spec.validate();
  switch (spec.mode) {
    case GuidanceMode::none: return DenoiserHandle(base.fn(), [base](double s) { return base.cost(s); });
    case GuidanceMode::cfg: {
      const auto* uncond = std::get_if<DenoiserHandle>(&aux);
      if (!uncond || !*uncond) throw MissingAuxiliary("guided_denoiser: cfg needs an unconditional denoiser");
      auto fn = [cond = base.fn(), uncond = uncond->fn(), spec](std::span<const double> x, double sigma) {
        if (!spec.active_at(sigma)) return cond(x, sigma);
        return cfg_combine(cond(x, sigma), uncond(x, sigma), spec.scale);
      };
      auto cost = [base, u = *uncond, spec](double sigma) {
        return spec.active_at(sigma) ? base.cost(sigma) + u.cost(sigma) : base.cost(sigma);
      };
      return DenoiserHandle(std::move(fn), std::move(cost));
    }
    case GuidanceMode::classifier: {
      const auto* grad = std::get_if<ClassifierGradFn>(&aux);
      if (!grad || !*grad) throw MissingAuxiliary("guided_denoiser: classifier guidance needs a classifier gradient");
      auto fn = [uncond = base.fn(), grad = *grad, spec](std::span<const double> x, double sigma) {
        Vec d = uncond(x, sigma);
        if (!spec.active_at(sigma)) return d;
        // Guidance is applied to the score; D = x + sigma^2 * score.
        const Vec score = axpby(1.0 / (sigma * sigma), d, -1.0 / (sigma * sigma), x);
        const Vec guided = classifier_guided_score(score, grad(x, sigma), spec.scale);
        return axpby(1.0, x, sigma * sigma, guided);
      };
      return DenoiserHandle(std::move(fn), [base](double s) { return base.cost(s); });
    }
  }
  throw InvalidParameter("guided_denoiser: unknown mode");
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// N(0, sigma_max^2 I).
inline Vec standard_init(std::size_t dim, double sigma_max, Rng& rng) {
  return scaled(rng.normal_vec(dim), sigma_max);
}

/// Exact draw from the perturbed mixture q(x; sigma_max^2 I).
inline Vec exact_prior_init(const OracleGMM& gmm, double sigma_max, Rng& rng) {
  Vec x = gmm_sample(gmm, rng, 1).front();
  return perturb(x, sigma_max, rng);
}

/// Informed initial point: y + sigma_start * n.
inline Vec warm_start_init(std::span<const double> y, double sigma_start, Rng& rng) {
  if (!(sigma_start > 0.0)) throw DomainError("warm_start_init: sigma_start must be > 0");
  return perturb(y, sigma_start, rng);
}

}  // namespace scoreflow
