#pragma once

// Training noise-level distributions, sampling step grids and loss weights.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "scoreflow/core.hpp"
#include "scoreflow/param.hpp"

namespace scoreflow {

// ---------------------------------------------------------------------------
// Training noise levels
// ---------------------------------------------------------------------------

enum class TrainNoiseKind { log_normal, log_uniform, cosine_uniform, sigmoid_uniform, logit_normal };

inline std::string_view to_string(TrainNoiseKind k) {
  switch (k) {
    case TrainNoiseKind::log_normal: return "log_normal";
    case TrainNoiseKind::log_uniform: return "log_uniform";
    case TrainNoiseKind::cosine_uniform: return "cosine_uniform";
    case TrainNoiseKind::sigmoid_uniform: return "sigmoid_uniform";
    case TrainNoiseKind::logit_normal: return "logit_normal";
  }
  return "?";
}

inline std::optional<TrainNoiseKind> parse_train_noise_kind(std::string_view s) {
  if (s == "log_normal") return TrainNoiseKind::log_normal;
  if (s == "log_uniform") return TrainNoiseKind::log_uniform;
  if (s == "cosine_uniform") return TrainNoiseKind::cosine_uniform;
  if (s == "sigmoid_uniform") return TrainNoiseKind::sigmoid_uniform;
  if (s == "logit_normal") return TrainNoiseKind::logit_normal;
  return std::nullopt;
}

struct TrainNoiseSampler {
  TrainNoiseKind kind = TrainNoiseKind::log_normal;
  double p_mean = -1.2;
  double p_std = 1.2;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  // sigmoid_uniform: ln sigma = offset + slope * logit(t) / 2
  double slope = 2.0;
  double offset = 0.0;

  bool bounded() const {
    return kind == TrainNoiseKind::log_uniform || kind == TrainNoiseKind::cosine_uniform ||
           kind == TrainNoiseKind::sigmoid_uniform;
  }

  void validate() const {
    if (kind == TrainNoiseKind::log_normal || kind == TrainNoiseKind::logit_normal) {
      if (!(p_std > 0.0) || !std::isfinite(p_mean)) throw InvalidParameter("train_noise: p_std must be > 0");
    }
    if (bounded()) {
      if (!(sigma_min > 0.0) || !(sigma_min < sigma_max) || !std::isfinite(sigma_max))
        throw InvalidParameter("train_noise: need 0 < sigma_min < sigma_max");
    }
    if (kind == TrainNoiseKind::sigmoid_uniform && !(slope > 0.0))
      throw InvalidParameter("train_noise: sigmoid slope must be > 0");
  }
};

inline double sample_train_sigma(const TrainNoiseSampler& spec, Rng& rng) {
  spec.validate();
  const auto clip = [&](double s) { return std::clamp(s, spec.sigma_min, spec.sigma_max); };
  switch (spec.kind) {
    case TrainNoiseKind::log_normal: return std::exp(spec.p_mean + spec.p_std * rng.normal());
    case TrainNoiseKind::log_uniform: {
      const double a = std::log(spec.sigma_min), b = std::log(spec.sigma_max);
      return clip(std::exp(a + (b - a) * rng.uniform()));
    }
    case TrainNoiseKind::cosine_uniform: return clip(std::tan(0.5 * kPi * rng.uniform_open()));
    case TrainNoiseKind::sigmoid_uniform: {
      const double t = rng.uniform_open();
      return clip(std::exp(spec.offset + 0.5 * spec.slope * std::log(t / (1.0 - t))));
    }
    case TrainNoiseKind::logit_normal: {
      const double t = 1.0 / (1.0 + std::exp(-(spec.p_mean + spec.p_std * rng.normal())));
      return t / (1.0 - t);
    }
  }
  throw InvalidParameter("train_noise: unknown kind");
}

// ---------------------------------------------------------------------------
// Sampling step grids
// ---------------------------------------------------------------------------

enum class GridKind { polynomial, linear, quadratic, log_linear, cosine_logsnr, linear_logsnr };

inline std::string_view to_string(GridKind k) {
  switch (k) {
    case GridKind::polynomial: return "polynomial";
    case GridKind::linear: return "linear";
    case GridKind::quadratic: return "quadratic";
    case GridKind::log_linear: return "log_linear";
    case GridKind::cosine_logsnr: return "cosine_logsnr";
    case GridKind::linear_logsnr: return "linear_logsnr";
  }
  return "?";
}

inline std::optional<GridKind> parse_grid_kind(std::string_view s) {
  if (s == "polynomial") return GridKind::polynomial;
  if (s == "linear") return GridKind::linear;
  if (s == "quadratic") return GridKind::quadratic;
  if (s == "log_linear") return GridKind::log_linear;
  if (s == "cosine_logsnr") return GridKind::cosine_logsnr;
  if (s == "linear_logsnr") return GridKind::linear_logsnr;
  return std::nullopt;
}

/// sigma_0 = sigma_max > ... > sigma_{N-1} = sigma_min > 0, followed by an explicit 0.
struct StepGrid {
  Vec sigmas;
  GridKind kind = GridKind::polynomial;
  double rho = 7.0;

  std::size_t steps() const { return sigmas.empty() ? 0 : sigmas.size() - 1; }
  double sigma_max() const { return sigmas.front(); }
};

inline StepGrid build_grid(GridKind kind, std::size_t n, double sigma_min, double sigma_max, double rho = 7.0) {
  if (n < 1) throw InvalidRange("build_grid: need at least one step");
  if (!(sigma_min > 0.0) || !(sigma_min < sigma_max) || !std::isfinite(sigma_max))
    throw InvalidRange("build_grid: need 0 < sigma_min < sigma_max");
  if (kind == GridKind::polynomial && !(rho > 0.0)) throw InvalidRho("build_grid: rho must be > 0");

  StepGrid grid{Vec(n + 1, 0.0), kind, rho};
  grid.sigmas[0] = sigma_max;
  if (n == 1) return grid;

  const double denom = static_cast<double>(n - 1);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double r = static_cast<double>(i) / denom;
    double s = 0.0;
    switch (kind) {
      case GridKind::polynomial: {
        const double a = std::pow(sigma_max, 1.0 / rho), b = std::pow(sigma_min, 1.0 / rho);
        s = std::pow(a + r * (b - a), rho);
        break;
      }
      case GridKind::linear: s = sigma_max + r * (sigma_min - sigma_max); break;
      case GridKind::quadratic: s = sigma_min + (sigma_max - sigma_min) * (1.0 - r) * (1.0 - r); break;
      case GridKind::log_linear:
      case GridKind::linear_logsnr: {
        const double a = std::log(sigma_max), b = std::log(sigma_min);
        s = std::exp(a + r * (b - a));
        break;
      }
      case GridKind::cosine_logsnr: {
        const double a = std::atan(sigma_max), b = std::atan(sigma_min);
        s = std::tan(a + r * (b - a));
        break;
      }
    }
    grid.sigmas[i] = s;
  }
  grid.sigmas[n - 1] = sigma_min;

  for (std::size_t i = 0; i + 1 < grid.sigmas.size(); ++i) {
    if (!(grid.sigmas[i] > grid.sigmas[i + 1]))
      throw InvalidRange("build_grid: grid is not strictly decreasing at index " + std::to_string(i));
  }
  return grid;
}

/// Wraps an explicit sigma sequence (must be strictly decreasing and end in 0).
inline StepGrid grid_from_sigmas(Vec sigmas) {
  if (sigmas.size() < 2 || sigmas.back() != 0.0) throw InvalidRange("grid_from_sigmas: must end with 0");
  for (std::size_t i = 0; i + 1 < sigmas.size(); ++i)
    if (!(sigmas[i] > sigmas[i + 1])) throw InvalidRange("grid_from_sigmas: not strictly decreasing");
  return {std::move(sigmas), GridKind::polynomial, 7.0};
}

// ---------------------------------------------------------------------------
// Loss weighting
// ---------------------------------------------------------------------------

// inv_cout is the literal 1/c_out weighting; edm is 1/c_out^2.
enum class WeightingKind { edm, uniform, inv_sigma2, inv_cout };

inline std::string_view to_string(WeightingKind k) {
  switch (k) {
    case WeightingKind::edm: return "edm";
    case WeightingKind::uniform: return "uniform";
    case WeightingKind::inv_sigma2: return "inv_sigma2";
    case WeightingKind::inv_cout: return "inv_cout";
  }
  return "?";
}

inline std::optional<WeightingKind> parse_weighting_kind(std::string_view s) {
  if (s == "edm") return WeightingKind::edm;
  if (s == "uniform") return WeightingKind::uniform;
  if (s == "inv_sigma2") return WeightingKind::inv_sigma2;
  if (s == "inv_cout") return WeightingKind::inv_cout;
  return std::nullopt;
}

struct LossWeighting {
  WeightingKind kind = WeightingKind::edm;
  double sigma_data = 0.5;
};

inline double loss_weight(const LossWeighting& w, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("loss_weight: sigma must be > 0");
  const double sd = w.sigma_data;
  switch (w.kind) {
    case WeightingKind::edm: return (sigma * sigma + sd * sd) / (sigma * sd * sigma * sd);
    case WeightingKind::uniform: return 1.0;
    case WeightingKind::inv_sigma2: return 1.0 / (sigma * sigma);
    case WeightingKind::inv_cout: return 1.0 / Preconditioner{sd}.c_out(sigma);
  }
  throw DomainError("loss_weight: unknown kind");
}

}  // namespace scoreflow
