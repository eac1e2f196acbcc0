#include "scoreflow/param.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

namespace scoreflow {
namespace {

TEST(FrameScale, Examples) {
  auto edm = frame_scale(FrameKind::edm, 0.5);
  EXPECT_EQ(edm.s, 1.0);
  EXPECT_EQ(edm.sigma, 0.5);
  auto ve = frame_scale(FrameKind::ve, 4.0);
  EXPECT_EQ(ve.s, 1.0);
  EXPECT_EQ(ve.sigma, 2.0);
  auto rf = frame_scale(FrameKind::rf, 0.5);
  EXPECT_EQ(rf.s, 0.5);
  EXPECT_EQ(rf.sigma, 1.0);
}

TEST(FrameScale, OriginAndMonotonicity) {
  for (auto f : {FrameKind::edm, FrameKind::ve, FrameKind::vp, FrameKind::rf}) {
    const auto z = frame_scale(f, 0.0);
    EXPECT_EQ(z.s, 1.0);
    EXPECT_EQ(z.sigma, 0.0);
    double prev = -1.0;
    for (int i = 0; i < 100; ++i) {
      const double t = 0.0099 * i;
      const double s = frame_scale(f, t).sigma;
      EXPECT_GT(s, prev);
      prev = s;
      EXPECT_NEAR(frame_time(f, s), t, 1e-12);
    }
  }
}

TEST(FrameScale, RfScaleTimesSigmaIsT) {
  for (double t : {0.1, 0.3, 0.77, 0.99}) {
    const auto fs = frame_scale(FrameKind::rf, t);
    EXPECT_NEAR(fs.s * fs.sigma, t, 1e-15);
  }
}

TEST(FrameScale, VpVariancePreserving) {
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double t = 0.999 * i / 999.0;
    const auto fs = frame_scale(FrameKind::vp, t);
    worst = std::max(worst, std::abs(fs.s * fs.s * (1.0 + fs.sigma * fs.sigma) - 1.0));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(FrameScale, DomainErrors) {
  EXPECT_THROW(frame_scale(FrameKind::rf, 1.0), DomainError);
  EXPECT_THROW(frame_scale(FrameKind::vp, 1.0), DomainError);
  EXPECT_THROW(frame_scale(FrameKind::edm, -0.1), DomainError);
  EXPECT_THROW(rescale_to_edm(Vec{1.0}, 1.0, FrameKind::rf), DomainError);
}

TEST(RescaleToEdm, Examples) {
  const Vec x = {0.3, -1.1};
  const auto edm = rescale_to_edm(x, 1.3, FrameKind::edm);
  EXPECT_EQ(edm.x, x);
  EXPECT_EQ(edm.sigma, 1.3);

  // RF t = 0.5: x_frame = 0.5 x0 + 0.5 eps -> x0 + eps, sigma 1.
  const double x0 = 0.8, eps = -0.4;
  const auto rf = rescale_to_edm(Vec{0.5 * x0 + 0.5 * eps}, 0.5, FrameKind::rf);
  EXPECT_NEAR(rf.x[0], x0 + eps, 1e-15);
  EXPECT_NEAR(rf.sigma, 1.0, 1e-15);

  const auto vp = rescale_to_edm(Vec{1.0}, 0.5, FrameKind::vp);
  EXPECT_NEAR(vp.x[0], std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(vp.sigma, 1.0, 1e-15);
}

TEST(RescaleToEdm, MarginalLaw) {
  // x_frame ~ N(s x0, s^2 sigma^2): rescaled samples ~ N(x0, sigma^2).
  Rng rng(17);
  const double x0 = 1.5;
  for (auto frame : {FrameKind::vp, FrameKind::rf, FrameKind::ve}) {
    const double t = 0.6;
    const auto fs = frame_scale(frame, t);
    const int n = 100000;
    double mean = 0.0, sq = 0.0;
    Vec xs(n);
    for (int i = 0; i < n; ++i) {
      xs[i] = rescale_to_edm(Vec{fs.s * (x0 + fs.sigma * rng.normal())}, t, frame).x[0];
      mean += xs[i];
    }
    mean /= n;
    for (double v : xs) sq += (v - mean) * (v - mean);
    EXPECT_NEAR(mean, x0, 0.02 * x0);
    EXPECT_NEAR(std::sqrt(sq / n), fs.sigma, 0.02 * fs.sigma);
  }
}

TEST(ToDenoiser, Examples) {
  EXPECT_DOUBLE_EQ(to_denoiser({Parameterization::epsilon, {0.25}}, Vec{1.0}, 2.0)[0], 0.5);
  EXPECT_NEAR(to_denoiser({Parameterization::velocity, {-1.0 / std::sqrt(2.0)}}, Vec{1.0}, 1.0)[0], 1.0, 1e-15);
  // Flow: x0 = 2, eps = 0, t = 0.5 -> x_rf = 1, u = -2, x_hat = 2, sigma = 1.
  EXPECT_DOUBLE_EQ(to_denoiser({Parameterization::flow, {-2.0}}, Vec{2.0}, 1.0, FrameContext{FrameKind::rf, 0.5})[0],
                   2.0);
}

TEST(ToDenoiser, Errors) {
  EXPECT_THROW(to_denoiser({Parameterization::flow, {1.0}}, Vec{1.0}, 1.0), MissingFrame);
  EXPECT_THROW(to_denoiser({Parameterization::epsilon, {1.0}}, Vec{1.0}, 0.0), DomainError);
  EXPECT_THROW(to_denoiser({Parameterization::epsilon, {1.0, 2.0}}, Vec{1.0}, 1.0), DimensionMismatch);
}

TEST(FromDenoiser, Examples) {
  const Vec d = {0.7, -0.2};
  EXPECT_EQ(from_denoiser(Parameterization::denoiser, d, Vec{5.0, 5.0}, 1.0).value, d);
  EXPECT_DOUBLE_EQ(from_denoiser(Parameterization::epsilon, Vec{0.5}, Vec{1.0}, 2.0).value[0], 0.25);
  EXPECT_DOUBLE_EQ(from_denoiser(Parameterization::score, Vec{0.5}, Vec{1.0}, 2.0).value[0], (0.5 - 1.0) / 4.0);
}

TEST(FromDenoiser, RoundTripIsIdentity) {
  Rng rng(23);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double sigma = testing::log_uniform(rng, 1e-3, 80.0);
    const Vec x = scaled(rng.normal_vec(3), 1.0 + sigma);
    const Vec d = rng.normal_vec(3);
    for (auto kind : {Parameterization::epsilon, Parameterization::score, Parameterization::velocity}) {
      const Vec back = to_denoiser(from_denoiser(kind, d, x, sigma), x, sigma);
      worst = std::max(worst, l2_distance(back, d) / std::max(1.0, norm(x)));
    }
    const FrameContext ctx{FrameKind::rf, frame_time(FrameKind::rf, sigma)};
    const Vec back = to_denoiser(from_denoiser(Parameterization::flow, d, x, sigma, ctx), x, sigma, ctx);
    worst = std::max(worst, l2_distance(back, d) / std::max(1.0, norm(x)));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(NativeOracle, EveryFrameAndKindReproducesTheDenoiser) {
  const auto gmm = benchmark_gmm();
  Rng rng(31);
  for (auto frame : {FrameKind::edm, FrameKind::ve, FrameKind::vp, FrameKind::rf}) {
    for (auto kind : {Parameterization::denoiser, Parameterization::epsilon, Parameterization::score,
                      Parameterization::velocity, Parameterization::flow}) {
      if (kind == Parameterization::flow && frame != FrameKind::rf) continue;
      const DenoiserFn d = edm_denoiser_from_native(oracle_native_model(gmm, kind, frame), frame);
      for (int probe = 0; probe < 20; ++probe) {
        const double sigma = testing::log_uniform(rng, 2e-3, 80.0);
        const Vec x = perturb(gmm_sample(gmm, rng, 1).front(), sigma, rng);
        EXPECT_LT(l2_distance(d(x, sigma), gmm_denoise(gmm, x, sigma)), 1e-8)
            << to_string(frame) << "/" << to_string(kind) << " sigma=" << sigma;
      }
    }
  }
}

TEST(Preconditioner, CoefficientsAtSigmaData) {
  const Preconditioner pc{0.5};
  EXPECT_NEAR(pc.c_skip(0.5), 0.5, 1e-15);
  EXPECT_NEAR(pc.c_in(0.5), 1.0 / (0.5 * std::sqrt(2.0)), 1e-15);
  EXPECT_NEAR(pc.c_out(0.5), 0.5 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(pc.c_noise(0.5), std::log(0.5) / 4.0, 1e-15);
}

TEST(Preconditioner, AlgebraicIdentities) {
  Rng rng(2);
  for (double sd : {0.25, 0.5, 1.0}) {
    const Preconditioner pc{sd};
    for (int i = 0; i < 200; ++i) {
      const double s = testing::log_uniform(rng, 1e-3, 100.0);
      EXPECT_NEAR(pc.c_skip(s) * (s * s + sd * sd), sd * sd, 1e-12 * sd * sd);
      EXPECT_NEAR(pc.c_out(s) * pc.c_out(s) * (s * s + sd * sd), s * s * sd * sd, 1e-12 * s * s * sd * sd);
      EXPECT_LE(pc.c_out(s) * pc.c_out(s) * pc.c_in(s) * pc.c_in(s), 1.0);
    }
  }
}

TEST(PreconditionWrap, ZeroNetworkGivesSkipTerm) {
  const Preconditioner pc{0.5};
  const auto d = precondition_wrap([](std::span<const double> x, double) { return Vec(x.size(), 0.0); }, pc);
  const Vec out = d(Vec{2.0, -1.0}, 0.3);
  EXPECT_DOUBLE_EQ(out[0], pc.c_skip(0.3) * 2.0);
  EXPECT_DOUBLE_EQ(out[1], pc.c_skip(0.3) * -1.0);
}

TEST(PreconditionWrap, SmallSigmaApproachesIdentity) {
  const auto d = precondition_wrap([](std::span<const double> x, double) { return Vec(x.size(), 3.0); },
                                   Preconditioner{0.5});
  const Vec x = {1.0, -2.0};
  EXPECT_LT(l2_distance(d(x, 1e-8), x), 1e-7);
}

TEST(PreconditionWrap, PassesScaledInputAndNoiseCode) {
  const Preconditioner pc{0.5};
  double seen_noise = 0.0;
  Vec seen_x;
  const auto d = precondition_wrap(
      [&](std::span<const double> x, double cn) {
        seen_x.assign(x.begin(), x.end());
        seen_noise = cn;
        return Vec{1.0};
      },
      pc);
  const Vec out = d(Vec{2.0}, 3.0);
  EXPECT_DOUBLE_EQ(seen_x[0], 2.0 * pc.c_in(3.0));
  EXPECT_DOUBLE_EQ(seen_noise, std::log(3.0) / 4.0);
  EXPECT_DOUBLE_EQ(out[0], pc.c_skip(3.0) * 2.0 + pc.c_out(3.0));
}

TEST(CfgCombine, Examples) {
  const Vec c = {1.0, 2.0}, u = {-0.5, 0.25};
  EXPECT_EQ(cfg_combine(c, u, 1.0), c);
  EXPECT_EQ(cfg_combine(c, u, 0.0), u);
  EXPECT_DOUBLE_EQ(cfg_combine(Vec{1.0}, Vec{0.0}, 2.0)[0], 2.0);
  // Same as uncond + s (cond - uncond).
  const Vec g = cfg_combine(c, u, 3.5);
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(g[i], u[i] + 3.5 * (c[i] - u[i]), 1e-14);
  EXPECT_THROW(cfg_combine(Vec{1.0}, Vec{1.0, 2.0}, 1.0), DimensionMismatch);
}

TEST(ClassifierGuidedScore, Examples) {
  const Vec s = {1.0, 1.0}, g = {0.1, -0.2};
  EXPECT_EQ(classifier_guided_score(s, g, 0.0), s);
  const Vec out = classifier_guided_score(s, g, 3.0);
  EXPECT_NEAR(out[0], 1.3, 1e-15);
  EXPECT_NEAR(out[1], 0.4, 1e-15);
}

TEST(ClassifierGuidedScore, ScaleOneRecoversConditionalScore) {
  const auto gmm = benchmark_gmm();
  Rng rng(41);
  for (int probe = 0; probe < 100; ++probe) {
    const std::size_t k = rng.index(gmm.size());
    const double sigma = testing::log_uniform(rng, 2e-3, 80.0);
    const Vec x = perturb(gmm_sample(gmm, rng, 1).front(), sigma, rng);
    const double h = 1e-5 * std::min(1.0, 10.0 * sigma);
    const Vec grad = testing::central_difference_gradient(
        [&](const Vec& p) { return std::log(gmm_component_posterior(gmm, p, sigma)[k]); }, x, h);
    const Vec guided = classifier_guided_score(gmm_score(gmm, x, sigma), grad, 1.0);
    const Vec cond = gmm_score(conditional_restrict(gmm, k), x, sigma);
    EXPECT_LT(l2_distance(guided, cond) / std::max(1.0, norm(cond)), 1e-6) << "sigma=" << sigma;
  }
}

TEST(GuidanceSpec, Validation) {
  GuidanceSpec g;
  g.sigma_lo = 2.0;
  g.sigma_hi = 1.0;
  EXPECT_THROW(g.validate(), InvalidParameter);
  g.sigma_hi = 3.0;
  g.scale = INFINITY;
  EXPECT_THROW(g.validate(), InvalidParameter);
}

}  // namespace
}  // namespace scoreflow
