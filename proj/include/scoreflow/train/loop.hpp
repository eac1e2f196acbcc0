#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "scoreflow/oracle.hpp"
#include "scoreflow/train/objective.hpp"
#include "scoreflow/train/optim.hpp"

namespace scoreflow::train {

struct TrainConfig {
  Objective objective = Objective::edm_denoise;
  TrainNoiseSampler train_noise{};
  LossWeighting weighting{};
  AdamW optimizer{};
  double ema_beta = 0.999;
  double cfg_dropout = 0.0;
  std::size_t steps = 5000;
  std::size_t batch = 128;
  std::uint64_t seed = 0;
  std::size_t log_every = 50;
  std::vector<std::size_t> hidden = {64, 64, 64};
  Conditioning conditioning = Conditioning::none;
  double sigma_data = 0.5;

  /// Optimizer and EMA settings of the large-scale reference setup.
  static TrainConfig paper_preset() {
    TrainConfig c;
    c.optimizer.lr = 5e-4;
    c.optimizer.weight_decay = 0.01;
    c.ema_beta = 0.9999;
    return c;
  }

  void validate() const {
    optimizer.validate();
    train_noise.validate();
    if (!(ema_beta >= 0.0 && ema_beta < 1.0)) throw InvalidParameter("train: ema_beta must be in [0, 1)");
    if (!(cfg_dropout >= 0.0 && cfg_dropout <= 1.0)) throw InvalidParameter("train: cfg_dropout must be in [0, 1]");
    if (steps == 0 || batch == 0 || log_every == 0) throw InvalidParameter("train: steps, batch and log_every must be >= 1");
    if (!(sigma_data > 0.0)) throw InvalidParameter("train: sigma_data must be > 0");
  }
};

/// Training distribution. With sigma_obs set, each example also carries an
/// observation y = x0 + sigma_obs * n (toy enhancement task).
struct TrainData {
  OracleGMM gmm;
  std::optional<double> sigma_obs;
};

struct LossPoint {
  std::size_t step = 0;
  double loss = 0.0;
};

struct TrainResult {
  MlpDenoiser model;
  MlpDenoiser ema;
  std::vector<LossPoint> curve;
};

inline MlpSpec model_spec_for(const TrainConfig& cfg, const TrainData& data) {
  MlpSpec s;
  s.dim = data.gmm.dim();
  s.hidden = cfg.hidden;
  s.conditioning = cfg.conditioning;
  s.kind = parameterization_of(cfg.objective);
  s.sigma_data = cfg.sigma_data;
  switch (cfg.conditioning) {
    case Conditioning::none: s.cond_dim = 0; break;
    case Conditioning::adaln: s.cond_dim = data.gmm.size(); break;
    case Conditioning::channel_concat:
      if (!data.sigma_obs) throw InvalidParameter("train: channel_concat needs observations (sigma_obs)");
      s.cond_dim = data.gmm.dim();
      break;
  }
  return s;
}

/// Clean rows and their condition rows; dropped conditions become zeros.
struct DataBatch {
  Mat x0;
  Mat cond;
};

inline DataBatch draw_data_batch(const MlpSpec& spec, const TrainData& data, std::size_t n, double dropout, Rng& rng) {
  const LabeledSamples s = gmm_sample_labeled(data.gmm, rng, n);
  DataBatch b{rows_to_matrix(s.points, spec.dim), Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.cond_dim))};
  if (spec.conditioning == Conditioning::none) return b;
  for (std::size_t i = 0; i < n; ++i) {
    Vec c = spec.conditioning == Conditioning::adaln ? one_hot(s.labels[i], spec.cond_dim)
                                                      : perturb(s.points[i], *data.sigma_obs, rng);
    if (auto kept = drop_condition(std::move(c), dropout, rng))
      for (std::size_t j = 0; j < spec.cond_dim; ++j) b.cond(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (*kept)[j];
  }
  return b;
}

/// Deterministic given cfg.seed. Throws NumericalDivergence on a non-finite loss.
inline TrainResult train_loop(const TrainConfig& cfg, const TrainData& data) {
  cfg.validate();
  const MlpSpec spec = model_spec_for(cfg, data);
  Rng rng(cfg.seed);
  MlpDenoiser model(spec, rng);
  MlpDenoiser ema = model;
  AdamState state;
  std::vector<LossPoint> curve;
  double window = 0.0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const DataBatch batch = draw_data_batch(spec, data, cfg.batch, cfg.cfg_dropout, rng);
    auto grads = model.zeros_like();
    const double loss =
        compute_loss(cfg.objective, model, batch.x0, batch.cond, cfg.train_noise, cfg.weighting, rng, &grads);
    if (!std::isfinite(loss)) throw NumericalDivergence("train_loop", step);
    adam_step(cfg.optimizer, state, model.params(), grads);
    ema_update(ema.params(), model.params(), cfg.ema_beta);
    window += loss;
    if ((step + 1) % cfg.log_every == 0) {
      curve.push_back({step + 1, window / static_cast<double>(cfg.log_every)});
      window = 0.0;
    }
  }
  return {std::move(model), std::move(ema), std::move(curve)};
}

/// Mean of the first (or last) k logged losses.
inline double smoothed_loss(const std::vector<LossPoint>& curve, std::size_t k, bool from_end) {
  if (curve.empty() || k == 0) throw InvalidParameter("smoothed_loss: empty curve");
  k = std::min(k, curve.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += curve[from_end ? curve.size() - 1 - i : i].loss;
  return sum / static_cast<double>(k);
}

/// Loss of `model` on a fixed held-out batch drawn from `seed`.
inline double evaluate_loss(const TrainConfig& cfg, const TrainData& data, const MlpDenoiser& model, std::size_t n,
                            std::uint64_t seed) {
  Rng rng(seed);
  const DataBatch batch = draw_data_batch(model.spec(), data, n, cfg.cfg_dropout, rng);
  return compute_loss(cfg.objective, model, batch.x0, batch.cond, cfg.train_noise, cfg.weighting, rng);
}

}  // namespace scoreflow::train
