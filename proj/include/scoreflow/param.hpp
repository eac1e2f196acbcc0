#pragma once

// Parameterization algebra: coordinate frames, output-kind conversions,
// EDM preconditioning and guidance combinators.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "scoreflow/core.hpp"
#include "scoreflow/oracle.hpp"

namespace scoreflow {

/// Denoiser in the EDM frame: (x, sigma) -> estimate of x0.
using DenoiserFn = std::function<Vec(std::span<const double> x, double sigma)>;

// ---------------------------------------------------------------------------
// Coordinate frames
// ---------------------------------------------------------------------------

enum class FrameKind { edm, ve, vp, rf };

inline std::string_view to_string(FrameKind f) {
  switch (f) {
    case FrameKind::edm: return "edm";
    case FrameKind::ve: return "ve";
    case FrameKind::vp: return "vp";
    case FrameKind::rf: return "rf";
  }
  return "?";
}

inline std::optional<FrameKind> parse_frame(std::string_view s) {
  if (s == "edm") return FrameKind::edm;
  if (s == "ve") return FrameKind::ve;
  if (s == "vp") return FrameKind::vp;
  if (s == "rf") return FrameKind::rf;
  return std::nullopt;
}

struct FrameScale {
  double s;
  double sigma;
};

/// (s(t), sigma(t)) for the frame. EDM: (1, t); VE: (1, sqrt t);
/// VP (trigonometric): (cos(pi t/2), tan(pi t/2)); RF: (1 - t, t / (1 - t)).
inline FrameScale frame_scale(FrameKind frame, double t) {
  if (!std::isfinite(t) || t < 0.0) throw DomainError("frame_scale: t must be finite and >= 0");
  switch (frame) {
    case FrameKind::edm: return {1.0, t};
    case FrameKind::ve: return {1.0, std::sqrt(t)};
    case FrameKind::vp: {
      if (t >= 1.0) throw DomainError("frame_scale: VP frame requires t in [0, 1)");
      const double a = 0.5 * kPi * t;
      return {std::cos(a), std::tan(a)};
    }
    case FrameKind::rf:
      if (t >= 1.0) throw DomainError("frame_scale: RF frame requires t in [0, 1)");
      return {1.0 - t, t / (1.0 - t)};
  }
  throw DomainError("frame_scale: unknown frame");
}

/// Inverse of sigma(t) on the frame's valid range.
inline double frame_time(FrameKind frame, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("frame_time: sigma must be finite and >= 0");
  switch (frame) {
    case FrameKind::edm: return sigma;
    case FrameKind::ve: return sigma * sigma;
    case FrameKind::vp: return 2.0 / kPi * std::atan(sigma);
    case FrameKind::rf: return sigma / (1.0 + sigma);
  }
  throw DomainError("frame_time: unknown frame");
}

struct EdmPoint {
  Vec x;
  double sigma;
};

/// Maps a frame-native noisy input to EDM coordinates: x / s(t), sigma(t).
inline EdmPoint rescale_to_edm(std::span<const double> x_frame, double t, FrameKind frame) {
  const auto [s, sigma] = frame_scale(frame, t);
  if (!(s > 0.0)) throw DomainError("rescale_to_edm: s(t) = 0");
  return {scaled(x_frame, 1.0 / s), sigma};
}

/// Inverse of rescale_to_edm: (x_hat, sigma) -> (s(t) x_hat, t).
struct FramePoint {
  Vec x;
  double t;
};

inline FramePoint rescale_from_edm(std::span<const double> x_hat, double sigma, FrameKind frame) {
  const double t = frame_time(frame, sigma);
  const auto fs = frame_scale(frame, t);
  return {scaled(x_hat, fs.s), t};
}

// ---------------------------------------------------------------------------
// Model outputs
// ---------------------------------------------------------------------------

enum class Parameterization { denoiser, epsilon, score, velocity, flow };

inline std::string_view to_string(Parameterization p) {
  switch (p) {
    case Parameterization::denoiser: return "denoiser";
    case Parameterization::epsilon: return "epsilon";
    case Parameterization::score: return "score";
    case Parameterization::velocity: return "velocity";
    case Parameterization::flow: return "flow";
  }
  return "?";
}

inline std::optional<Parameterization> parse_parameterization(std::string_view s) {
  if (s == "denoiser") return Parameterization::denoiser;
  if (s == "epsilon") return Parameterization::epsilon;
  if (s == "score") return Parameterization::score;
  if (s == "velocity") return Parameterization::velocity;
  if (s == "flow") return Parameterization::flow;
  return std::nullopt;
}

struct ModelOutput {
  Parameterization kind = Parameterization::denoiser;
  Vec value;
};

/// Frame and frame time a flow output was produced at.
struct FrameContext {
  FrameKind frame = FrameKind::rf;
  double t = 0.0;
};

namespace detail {

inline double flow_time(const std::optional<FrameContext>& ctx, const char* where) {
  if (!ctx) throw MissingFrame(std::string(where) + ": flow outputs need the RF frame time");
  if (ctx->frame != FrameKind::rf) throw DomainError(std::string(where) + ": flow outputs are defined in the RF frame");
  if (!(ctx->t > 0.0) || !(ctx->t < 1.0)) throw DomainError(std::string(where) + ": RF time must lie in (0, 1)");
  return ctx->t;
}

}  // namespace detail

/// Canonical x0 estimate from a model output. `x` and `sigma` are EDM
/// coordinates; flow outputs additionally need the RF time they were made at.
inline Vec to_denoiser(const ModelOutput& out, std::span<const double> x, double sigma,
                       std::optional<FrameContext> ctx = std::nullopt) {
  require_same_size(out.value, x, "to_denoiser");
  if (out.kind == Parameterization::flow) {
    const double t = detail::flow_time(ctx, "to_denoiser");
    // x_rf = (1 - t) x_hat; D = x_rf - t u
    return axpby(1.0 - t, x, -t, out.value);
  }
  if (!(sigma > 0.0)) throw DomainError("to_denoiser: sigma must be > 0");
  switch (out.kind) {
    case Parameterization::denoiser: return out.value;
    case Parameterization::epsilon: return axpby(1.0, x, -sigma, out.value);
    case Parameterization::score: return axpby(1.0, x, sigma * sigma, out.value);
    case Parameterization::velocity: {
      const double r = 1.0 + sigma * sigma;
      return axpby(1.0 / r, x, -sigma / std::sqrt(r), out.value);
    }
    case Parameterization::flow: break;
  }
  throw DomainError("to_denoiser: unknown parameterization");
}

/// Inverse of to_denoiser.
inline ModelOutput from_denoiser(Parameterization kind, std::span<const double> x0_hat, std::span<const double> x,
                                 double sigma, std::optional<FrameContext> ctx = std::nullopt) {
  require_same_size(x0_hat, x, "from_denoiser");
  if (kind == Parameterization::flow) {
    const double t = detail::flow_time(ctx, "from_denoiser");
    return {kind, axpby((1.0 - t) / t, x, -1.0 / t, x0_hat)};
  }
  if (!(sigma > 0.0)) throw DomainError("from_denoiser: sigma must be > 0");
  switch (kind) {
    case Parameterization::denoiser: return {kind, Vec(x0_hat.begin(), x0_hat.end())};
    case Parameterization::epsilon: return {kind, axpby(1.0 / sigma, x, -1.0 / sigma, x0_hat)};
    case Parameterization::score: return {kind, axpby(-1.0 / (sigma * sigma), x, 1.0 / (sigma * sigma), x0_hat)};
    case Parameterization::velocity: {
      const double r = 1.0 + sigma * sigma;
      const double k = std::sqrt(r) / sigma;
      return {kind, axpby(k / r, x, -k, x0_hat)};
    }
    case Parameterization::flow: break;
  }
  throw DomainError("from_denoiser: unknown parameterization");
}

/// Model that consumes frame-native inputs: (x_frame, t) -> output.
/// Score outputs are gradients with respect to x_frame.
using NativeModelFn = std::function<ModelOutput(std::span<const double> x_frame, double t)>;

/// Wraps a frame-native model as an EDM denoiser via the rescaling maps.
inline DenoiserFn edm_denoiser_from_native(NativeModelFn model, FrameKind frame) {
  return [model = std::move(model), frame](std::span<const double> x_hat, double sigma) {
    const FramePoint fp = rescale_from_edm(x_hat, sigma, frame);
    ModelOutput out = model(fp.x, fp.t);
    if (out.kind == Parameterization::score) {
      const double s = frame_scale(frame, fp.t).s;
      for (auto& e : out.value) e *= s;
    }
    return to_denoiser(out, x_hat, sigma, FrameContext{frame, fp.t});
  };
}

/// The analytic mixture expressed as a frame-native model of the given kind.
inline NativeModelFn oracle_native_model(OracleGMM gmm, Parameterization kind, FrameKind frame) {
  return [gmm = std::move(gmm), kind, frame](std::span<const double> x_frame, double t) {
    const EdmPoint p = rescale_to_edm(x_frame, t, frame);
    const Vec d = gmm_denoise(gmm, p.x, p.sigma);
    ModelOutput out = from_denoiser(kind, d, p.x, p.sigma, FrameContext{frame, t});
    if (kind == Parameterization::score) {
      const double s = frame_scale(frame, t).s;
      for (auto& e : out.value) e /= s;
    }
    return out;
  };
}

inline DenoiserFn oracle_denoiser(OracleGMM gmm) {
  return [gmm = std::move(gmm)](std::span<const double> x, double sigma) { return gmm_denoise(gmm, x, sigma); };
}

// ---------------------------------------------------------------------------
// Preconditioning
// ---------------------------------------------------------------------------

struct Preconditioner {
  double sigma_data = 0.5;

  double c_skip(double sigma) const {
    const double sd2 = sigma_data * sigma_data;
    return sd2 / (sigma * sigma + sd2);
  }
  double c_out(double sigma) const {
    return sigma * sigma_data / std::sqrt(sigma * sigma + sigma_data * sigma_data);
  }
  double c_in(double sigma) const { return 1.0 / std::sqrt(sigma * sigma + sigma_data * sigma_data); }
  double c_noise(double sigma) const { return 0.25 * std::log(sigma); }
};

/// Raw network map F(c_in x, c_noise).
using RawNetworkFn = std::function<Vec(std::span<const double> scaled_x, double c_noise)>;

/// D(x, sigma) = c_skip x + c_out F(c_in x, c_noise).
inline DenoiserFn precondition_wrap(RawNetworkFn raw, Preconditioner pc) {
  return [raw = std::move(raw), pc](std::span<const double> x, double sigma) {
    if (!(sigma > 0.0)) throw DomainError("precondition_wrap: sigma must be > 0");
    const Vec f = raw(scaled(x, pc.c_in(sigma)), pc.c_noise(sigma));
    require_same_size(f, x, "precondition_wrap");
    return axpby(pc.c_skip(sigma), x, pc.c_out(sigma), f);
  };
}

// ---------------------------------------------------------------------------
// Guidance
// ---------------------------------------------------------------------------

enum class GuidanceMode { none, cfg, classifier };

inline std::string_view to_string(GuidanceMode m) {
  switch (m) {
    case GuidanceMode::none: return "none";
    case GuidanceMode::cfg: return "cfg";
    case GuidanceMode::classifier: return "classifier";
  }
  return "?";
}

inline std::optional<GuidanceMode> parse_guidance_mode(std::string_view s) {
  if (s == "none") return GuidanceMode::none;
  if (s == "cfg") return GuidanceMode::cfg;
  if (s == "classifier") return GuidanceMode::classifier;
  return std::nullopt;
}

struct GuidanceSpec {
  GuidanceMode mode = GuidanceMode::none;
  double scale = 1.0;
  double sigma_lo = 0.0;
  double sigma_hi = INFINITY;
  std::size_t target = 0;

  void validate() const {
    if (!std::isfinite(scale)) throw InvalidParameter("guidance: scale must be finite");
    if (!(sigma_lo <= sigma_hi)) throw InvalidParameter("guidance: sigma_lo must be <= sigma_hi");
  }
  bool active_at(double sigma) const { return sigma >= sigma_lo && sigma <= sigma_hi; }
};

/// (1 - s) uncond + s cond.
inline Vec cfg_combine(std::span<const double> cond, std::span<const double> uncond, double scale) {
  require_same_size(cond, uncond, "cfg_combine");
  return axpby(scale, cond, 1.0 - scale, uncond);
}

inline Vec classifier_guided_score(std::span<const double> score_uncond, std::span<const double> classifier_grad,
                                   double scale) {
  require_same_size(score_uncond, classifier_grad, "classifier_guided_score");
  return axpby(1.0, score_uncond, scale, classifier_grad);
}

}  // namespace scoreflow
