#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string_view>

#include "scoreflow/schedule.hpp"
#include "scoreflow/train/mlp.hpp"

namespace scoreflow::train {

enum class Objective { edm_denoise, epsilon, v_pred, rectified_flow };

inline std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::edm_denoise: return "edm_denoise";
    case Objective::epsilon: return "epsilon";
    case Objective::v_pred: return "v_pred";
    case Objective::rectified_flow: return "rectified_flow";
  }
  return "?";
}

inline std::optional<Objective> parse_objective(std::string_view s) {
  if (s == "edm_denoise") return Objective::edm_denoise;
  if (s == "epsilon") return Objective::epsilon;
  if (s == "v_pred") return Objective::v_pred;
  if (s == "rectified_flow") return Objective::rectified_flow;
  return std::nullopt;
}

/// Output kind a model trained with `o` produces.
inline Parameterization parameterization_of(Objective o) {
  switch (o) {
    case Objective::edm_denoise: return Parameterization::denoiser;
    case Objective::epsilon: return Parameterization::epsilon;
    case Objective::v_pred: return Parameterization::velocity;
    case Objective::rectified_flow: return Parameterization::flow;
  }
  throw InvalidParameter("unknown objective");
}

/// Noised batch with network inputs and regression targets. For edm_denoise
/// the prediction is skip + c_out * F; otherwise it is F itself.
struct LossBatch {
  Objective objective = Objective::edm_denoise;
  Mat net_in;
  ColVec noise;
  Mat cond;
  Mat target;
  ColVec weight;
  Mat skip;
  ColVec out_scale;
  ColVec sigma;  // EDM noise level of each row
};

inline Mat rows_to_matrix(const std::vector<Vec>& rows, std::size_t cols) {
  Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) throw DimensionMismatch("rows_to_matrix");
    for (std::size_t j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

/// Draws noise levels and noise for every row of x0 and builds the loss inputs.
/// rectified_flow draws t ~ U(0, 1) and ignores `noise_sampler` and `weighting`;
/// only edm_denoise applies `weighting`.
inline LossBatch prepare_loss_batch(Objective objective, const MlpSpec& spec, const Mat& x0, const Mat& cond,
                                    const TrainNoiseSampler& noise_sampler, const LossWeighting& weighting, Rng& rng) {
  if (x0.rows() == 0) throw InvalidParameter("compute_loss: empty batch");
  if (x0.cols() != static_cast<Eigen::Index>(spec.dim)) throw DimensionMismatch("compute_loss: data width");
  if (parameterization_of(objective) != spec.kind) throw InvalidParameter("compute_loss: model kind does not match objective");
  const Eigen::Index n = x0.rows(), d = x0.cols();
  const double sd = spec.sigma_data;
  LossBatch b;
  b.objective = objective;
  b.net_in.resize(n, d);
  b.noise.resize(n);
  b.cond = cond.rows() == n ? cond : Mat(n, 0);
  b.target.resize(n, d);
  b.weight = ColVec::Ones(n);
  b.sigma.resize(n);
  if (objective == Objective::edm_denoise) {
    b.skip.resize(n, d);
    b.out_scale.resize(n);
  }
  const Preconditioner pc{sd};
  Vec x(static_cast<std::size_t>(d)), eps(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    double sigma;
    if (objective == Objective::rectified_flow) {
      const double t = rng.uniform_open();
      sigma = sd * t / (1.0 - t);
    } else {
      sigma = sample_train_sigma(noise_sampler, rng);
    }
    for (Eigen::Index j = 0; j < d; ++j) {
      eps[static_cast<std::size_t>(j)] = rng.normal();
      x[static_cast<std::size_t>(j)] = x0(i, j) + sigma * eps[static_cast<std::size_t>(j)];
    }
    const NetworkPoint p = network_point(spec, x, sigma);
    b.noise(i) = p.noise;
    b.sigma(i) = sigma;
    const double s_hat = sigma / sd;
    const double cos_phi = 1.0 / std::sqrt(1.0 + s_hat * s_hat), sin_phi = s_hat * cos_phi;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double e = eps[static_cast<std::size_t>(j)];
      b.net_in(i, j) = p.x[static_cast<std::size_t>(j)];
      switch (objective) {
        case Objective::edm_denoise: b.target(i, j) = x0(i, j); break;
        case Objective::epsilon: b.target(i, j) = e; break;
        case Objective::v_pred: b.target(i, j) = cos_phi * e - sin_phi * x0(i, j) / sd; break;
        case Objective::rectified_flow: b.target(i, j) = e - x0(i, j) / sd; break;
      }
    }
    if (objective == Objective::edm_denoise) {
      b.weight(i) = loss_weight(weighting, sigma);
      b.out_scale(i) = pc.c_out(sigma);
      for (Eigen::Index j = 0; j < d; ++j) b.skip(i, j) = pc.c_skip(sigma) * x[static_cast<std::size_t>(j)];
    }
  }
  return b;
}

/// Any batched raw network: (net_in, noise, cond) -> raw output rows.
using RawBatchFn = std::function<Mat(const Mat& net_in, const ColVec& noise, const Mat& cond)>;

inline double compute_loss(const LossBatch& b, const RawBatchFn& raw) {
  Mat pred = raw(b.net_in, b.noise, b.cond);
  if (pred.rows() != b.target.rows() || pred.cols() != b.target.cols()) throw DimensionMismatch("compute_loss: output shape");
  if (b.objective == Objective::edm_denoise) pred = b.skip + b.out_scale.asDiagonal() * pred;
  return (b.weight.array() * (pred - b.target).rowwise().squaredNorm().array()).sum() / static_cast<double>(pred.rows());
}

/// Loss of an MLP; when `grads` is given the parameter gradients are added into it.
inline double compute_loss(const LossBatch& b, const MlpDenoiser& model, std::vector<Mat>* grads = nullptr) {
  Tape tape;
  Tape::Id pred = model.forward(tape, b.net_in, b.noise, b.cond, grads);
  if (b.objective == Objective::edm_denoise) pred = tape.add(tape.scale_rows(pred, b.out_scale), tape.constant(b.skip));
  const Tape::Id loss = tape.weighted_mse(pred, b.target, b.weight);
  if (grads) tape.backward(loss);
  return tape.value(loss)(0, 0);
}

inline double compute_loss(Objective objective, const MlpDenoiser& model, const Mat& x0, const Mat& cond,
                           const TrainNoiseSampler& noise_sampler, const LossWeighting& weighting, Rng& rng,
                           std::vector<Mat>* grads = nullptr) {
  return compute_loss(prepare_loss_batch(objective, model.spec(), x0, cond, noise_sampler, weighting, rng), model, grads);
}

}  // namespace scoreflow::train
