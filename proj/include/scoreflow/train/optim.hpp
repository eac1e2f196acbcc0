#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "scoreflow/train/tape.hpp"

namespace scoreflow::train {

/// Adam with bias correction and decoupled weight decay.
struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const {
    if (!(lr > 0.0)) throw InvalidParameter("optimizer: step size must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw InvalidParameter("optimizer: betas in [0, 1)");
    if (!(eps > 0.0) || !(weight_decay >= 0.0)) throw InvalidParameter("optimizer: eps > 0 and weight_decay >= 0");
  }
};

struct AdamState {
  std::vector<Mat> m, v;
  std::size_t t = 0;
};

inline void adam_step(const AdamW& opt, AdamState& state, std::vector<Mat>& params, const std::vector<Mat>& grads) {
  if (grads.size() != params.size()) throw DimensionMismatch("adam_step: parameter groups");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Mat::Zero(p.rows(), p.cols()));
      state.v.push_back(Mat::Zero(p.rows(), p.cols()));
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols())
      throw DimensionMismatch("adam_step: gradient shape");
    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * grads[i];
    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * grads[i].cwiseAbs2();
    const auto step = (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + opt.eps);
    params[i].array() -= opt.lr * (step + opt.weight_decay * params[i].array());
  }
}

/// ema <- beta * ema + (1 - beta) * params
inline void ema_update(std::vector<Mat>& ema, const std::vector<Mat>& params, double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw InvalidParameter("ema_update: beta must be in [0, 1)");
  if (ema.size() != params.size()) throw DimensionMismatch("ema_update: parameter groups");
  for (std::size_t i = 0; i < ema.size(); ++i) ema[i] = beta * ema[i] + (1.0 - beta) * params[i];
}

/// Null (nullopt) with probability p, otherwise the condition. Always consumes one uniform draw.
template <class T>
std::optional<T> drop_condition(T condition, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidParameter("drop_condition: p must be in [0, 1]");
  if (rng.uniform() < p) return std::nullopt;
  return condition;
}

}  // namespace scoreflow::train
