#include "scoreflow/schedule.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "test_util.hpp"

namespace scoreflow {
namespace {

std::vector<double> draw(const TrainNoiseSampler& spec, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& s : out) s = sample_train_sigma(spec, rng);
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return 0.5 * (v[v.size() / 2] + v[(v.size() - 1) / 2]);
}

// Two-sided one-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> v, const std::function<double(double)>& cdf) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double f = cdf(v[i]);
    d = std::max({d, std::abs(f - i / n), std::abs((i + 1) / n - f)});
  }
  return d;
}

// Asymptotic critical value at significance 1e-3: sqrt(-ln(alpha/2)/2) / sqrt(n).
double ks_critical(std::size_t n) { return std::sqrt(-std::log(1e-3 / 2.0) / 2.0) / std::sqrt(static_cast<double>(n)); }

TEST(SampleTrainSigma, LogNormalMedian) {
  TrainNoiseSampler spec{TrainNoiseKind::log_normal, -0.4, 1.2};
  EXPECT_NEAR(median(draw(spec, 100000, 1)), std::exp(-0.4), 0.03 * std::exp(-0.4));
}

TEST(SampleTrainSigma, LogUniformMedian) {
  TrainNoiseSampler spec;
  spec.kind = TrainNoiseKind::log_uniform;
  spec.sigma_min = 0.01;
  spec.sigma_max = 100.0;
  EXPECT_NEAR(median(draw(spec, 100000, 2)), 1.0, 0.03);
}

TEST(SampleTrainSigma, LogitNormalMedian) {
  TrainNoiseSampler spec{TrainNoiseKind::logit_normal, 0.0, 1.0};
  EXPECT_NEAR(median(draw(spec, 100000, 3)), 1.0, 0.05);
}

TEST(SampleTrainSigma, SupportAndBounds) {
  for (auto kind : {TrainNoiseKind::log_normal, TrainNoiseKind::log_uniform, TrainNoiseKind::cosine_uniform,
                    TrainNoiseKind::sigmoid_uniform, TrainNoiseKind::logit_normal}) {
    TrainNoiseSampler spec;
    spec.kind = kind;
    spec.sigma_min = 0.01;
    spec.sigma_max = 50.0;
    for (double s : draw(spec, 100000, 4)) {
      ASSERT_GT(s, 0.0);
      ASSERT_TRUE(std::isfinite(s));
      if (spec.bounded()) {
        ASSERT_GE(s, spec.sigma_min);
        ASSERT_LE(s, spec.sigma_max);
      }
    }
  }
}

TEST(SampleTrainSigma, KolmogorovSmirnovAgainstAnalyticCdf) {
  const std::size_t n = 100000;
  {
    TrainNoiseSampler spec{TrainNoiseKind::log_normal, -1.2, 1.2};
    auto cdf = [](double s) { return testing::standard_normal_cdf((std::log(s) + 1.2) / 1.2); };
    EXPECT_LT(ks_statistic(draw(spec, n, 10), cdf), ks_critical(n));
  }
  {
    TrainNoiseSampler spec;
    spec.kind = TrainNoiseKind::log_uniform;
    spec.sigma_min = 0.002;
    spec.sigma_max = 80.0;
    auto cdf = [](double s) { return (std::log(s) - std::log(0.002)) / (std::log(80.0) - std::log(0.002)); };
    EXPECT_LT(ks_statistic(draw(spec, n, 11), cdf), ks_critical(n));
  }
  {
    TrainNoiseSampler spec{TrainNoiseKind::logit_normal, 0.3, 0.8};
    auto cdf = [](double s) {
      const double t = s / (1.0 + s);
      return testing::standard_normal_cdf((std::log(t / (1.0 - t)) - 0.3) / 0.8);
    };
    EXPECT_LT(ks_statistic(draw(spec, n, 12), cdf), ks_critical(n));
  }
}

TEST(SampleTrainSigma, InvalidParams) {
  Rng rng(0);
  TrainNoiseSampler bad{TrainNoiseKind::log_normal, 0.0, 0.0};
  EXPECT_THROW(sample_train_sigma(bad, rng), InvalidParameter);
  TrainNoiseSampler range;
  range.kind = TrainNoiseKind::log_uniform;
  range.sigma_min = 2.0;
  range.sigma_max = 1.0;
  EXPECT_THROW(sample_train_sigma(range, rng), InvalidParameter);
}

TEST(BuildGrid, EndpointsAndMonotonicity) {
  for (auto kind : {GridKind::polynomial, GridKind::linear, GridKind::quadratic, GridKind::log_linear,
                    GridKind::cosine_logsnr, GridKind::linear_logsnr}) {
    for (std::size_t n : {2u, 3u, 8u, 64u, 257u}) {
      const auto g = build_grid(kind, n, 0.002, 80.0, 7.0);
      ASSERT_EQ(g.sigmas.size(), n + 1);
      EXPECT_EQ(g.sigmas.front(), 80.0);
      EXPECT_EQ(g.sigmas[n - 1], 0.002);
      EXPECT_EQ(g.sigmas.back(), 0.0);
      for (std::size_t i = 0; i < n; ++i) EXPECT_GT(g.sigmas[i], g.sigmas[i + 1]);
    }
  }
}

TEST(BuildGrid, SingleStep) {
  const auto g = build_grid(GridKind::polynomial, 1, 0.002, 80.0);
  EXPECT_EQ(g.sigmas, (Vec{80.0, 0.0}));
}

TEST(BuildGrid, PolynomialRhoOneIsLinear) {
  const auto p = build_grid(GridKind::polynomial, 33, 0.1, 10.0, 1.0);
  const auto l = build_grid(GridKind::linear, 33, 0.1, 10.0);
  for (std::size_t i = 0; i < p.sigmas.size(); ++i) EXPECT_NEAR(p.sigmas[i], l.sigmas[i], 1e-12);
}

TEST(BuildGrid, LogLinearGeometricMidpoint) {
  const auto g = build_grid(GridKind::log_linear, 3, 0.01, 100.0);
  EXPECT_EQ(g.sigmas[0], 100.0);
  EXPECT_NEAR(g.sigmas[1], 1.0, 1e-14);
  EXPECT_EQ(g.sigmas[2], 0.01);
  EXPECT_EQ(g.sigmas[3], 0.0);
}

TEST(BuildGrid, KarrasFormula) {
  const auto g = build_grid(GridKind::polynomial, 18, 0.002, 80.0, 7.0);
  for (std::size_t i = 0; i < 18; ++i) {
    const double r = i / 17.0;
    const double expected = std::pow(std::pow(80.0, 1 / 7.0) + r * (std::pow(0.002, 1 / 7.0) - std::pow(80.0, 1 / 7.0)), 7.0);
    EXPECT_NEAR(g.sigmas[i], expected, 1e-12 * expected);
  }
}

TEST(BuildGrid, Errors) {
  EXPECT_THROW(build_grid(GridKind::linear, 0, 0.1, 1.0), InvalidRange);
  EXPECT_THROW(build_grid(GridKind::linear, 4, 1.0, 0.1), InvalidRange);
  EXPECT_THROW(build_grid(GridKind::linear, 4, 0.0, 1.0), InvalidRange);
  EXPECT_THROW(build_grid(GridKind::polynomial, 4, 0.1, 1.0, 0.0), InvalidRho);
  EXPECT_THROW(build_grid(GridKind::polynomial, 4, 0.1, 1.0, -2.0), InvalidRho);
}

TEST(BuildGrid, Deterministic) {
  EXPECT_EQ(build_grid(GridKind::cosine_logsnr, 50, 0.002, 80.0).sigmas,
            build_grid(GridKind::cosine_logsnr, 50, 0.002, 80.0).sigmas);
}

TEST(LossWeight, Examples) {
  const double sd = 0.5;
  EXPECT_NEAR(loss_weight({WeightingKind::edm, sd}, sd), 2.0 / (sd * sd), 1e-12);
  EXPECT_EQ(loss_weight({WeightingKind::uniform, sd}, 3.7), 1.0);
  EXPECT_EQ(loss_weight({WeightingKind::inv_sigma2, sd}, 2.0), 0.25);
  EXPECT_THROW(loss_weight({WeightingKind::edm, sd}, 0.0), DomainError);
}

TEST(LossWeight, EdmIsInverseSquaredCout) {
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const double s = testing::log_uniform(rng, 1e-3, 100.0);
    const double c = Preconditioner{0.5}.c_out(s);
    EXPECT_NEAR(loss_weight({WeightingKind::edm, 0.5}, s) * c * c, 1.0, 1e-12);
    EXPECT_NEAR(loss_weight({WeightingKind::inv_cout, 0.5}, s) * c, 1.0, 1e-12);
  }
}

}  // namespace
}  // namespace scoreflow
