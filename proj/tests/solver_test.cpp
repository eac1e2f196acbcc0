#include "scoreflow/solver.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

namespace scoreflow {
namespace {

constexpr double kMu = 0.3;
constexpr double kSigmaData = 0.5;
constexpr double kSigmaMax = 80.0;

// x(0) for the PF ODE of N(mu, sd^2) data started at x_T on sigma_max.
double gaussian_endpoint(double x_T) {
  return kMu + (x_T - kMu) * kSigmaData / std::sqrt(kSigmaData * kSigmaData + kSigmaMax * kSigmaMax);
}

// Classic RK4 in sigma on dx/dsigma = -sigma * score(x, sigma), which is regular at sigma = 0.
double rk4_endpoint(double x_T, int steps) {
  const auto gmm = single_gaussian({kMu}, kSigmaData);
  const auto f = [&](double x, double s) {
    s = std::max(s, 0.0);
    return -s * gmm_score(gmm, Vec{x}, s)[0];
  };
  double x = x_T;
  const double h = -kSigmaMax / steps;
  for (int i = 0; i < steps; ++i) {
    const double s = kSigmaMax + i * h;
    const double k1 = f(x, s), k2 = f(x + 0.5 * h * k1, s + 0.5 * h), k3 = f(x + 0.5 * h * k2, s + 0.5 * h),
                 k4 = f(x + h * k3, s + h);
    x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return x;
}

double fitted_slope(const std::vector<std::size_t>& ns, const std::vector<double>& errs) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    mx += std::log(static_cast<double>(ns[i]));
    my += std::log(errs[i]);
  }
  mx /= ns.size();
  my /= ns.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    const double dx = std::log(static_cast<double>(ns[i])) - mx;
    sxy += dx * (std::log(errs[i]) - my);
    sxx += dx * dx;
  }
  return -sxy / sxx;
}

double order_slope(const SolverSpec& spec) {
  const DenoiserHandle d(oracle_denoiser(single_gaussian({kMu}, kSigmaData)));
  const double x_T = kMu + kSigmaMax;
  const std::vector<std::size_t> ns = {8, 16, 32, 64, 128, 256};
  std::vector<double> errs;
  for (auto n : ns) {
    const auto grid = build_grid(GridKind::polynomial, n, 0.002, kSigmaMax, 7.0);
    errs.push_back(std::abs(solve(spec, d, grid, Vec{x_T}).x[0] - gaussian_endpoint(x_T)));
  }
  return fitted_slope(ns, errs);
}

const std::vector<SolverSpec> kDeterministic = {
    {SamplerKind::euler, 1}, {SamplerKind::heun, 2},  {SamplerKind::dpmpp, 1}, {SamplerKind::dpmpp, 2},
    {SamplerKind::dpmpp, 3}, {SamplerKind::unipc, 2}, {SamplerKind::unipc, 3}, {SamplerKind::unipc, 4}};

TEST(ClosedFormEndpoint, AgreesWithDenseRk4) {
  for (double x_T : {kMu + kSigmaMax, kMu - 0.5 * kSigmaMax, 3.0}) {
    EXPECT_NEAR(rk4_endpoint(x_T, 100000), gaussian_endpoint(x_T), 1e-9);
  }
}

TEST(Solvers, DiracExactness) {
  const Vec x0 = {0.7, -1.3};
  const DenoiserHandle d(oracle_denoiser(dirac(x0)));
  Rng rng(3);
  for (const auto& spec : kDeterministic) {
    for (std::size_t n : {1u, 4u, 16u}) {
      for (auto kind : {GridKind::polynomial, GridKind::log_linear, GridKind::linear}) {
        const Vec x_T = standard_init(2, kSigmaMax, rng);
        const Vec out = solve(spec, d, build_grid(kind, n, 0.002, kSigmaMax), x_T).x;
        EXPECT_LT(l2_distance(out, x0), 1e-12) << to_string(spec.kind) << spec.order << " N=" << n;
      }
    }
  }
}

TEST(Solvers, NfeAccounting) {
  DenoiserHandle d(oracle_denoiser(benchmark_gmm()));
  for (const auto& spec : kDeterministic) {
    for (std::size_t n : {1u, 2u, 7u, 32u}) {
      d.reset_nfe();
      const auto r = solve(spec, d, build_grid(GridKind::polynomial, n, 0.002, kSigmaMax), Vec{1.0, 2.0});
      EXPECT_EQ(r.nfe, d.nfe());
      EXPECT_EQ(r.nfe, expected_nfe(spec, n)) << to_string(spec.kind) << " N=" << n;
    }
  }
  EXPECT_EQ(expected_nfe({SamplerKind::euler, 1}, 10), 10u);
  EXPECT_EQ(expected_nfe({SamplerKind::heun, 2}, 10), 19u);
  EXPECT_EQ(expected_nfe({SamplerKind::dpmpp, 3}, 10), 10u);
  EXPECT_EQ(expected_nfe({SamplerKind::unipc, 3}, 10), 11u);
}

TEST(Solvers, ConvergenceOrders) {
  const double euler = order_slope({SamplerKind::euler, 1});
  EXPECT_GE(euler, 0.85);
  EXPECT_LE(euler, 1.15);
  const double heun = order_slope({SamplerKind::heun, 2});
  EXPECT_GE(heun, 1.7);
  EXPECT_LE(heun, 2.3);
  EXPECT_GE(order_slope({SamplerKind::dpmpp, 2}), 1.7);
  EXPECT_GE(order_slope({SamplerKind::dpmpp, 3}), 2.5);
  EXPECT_GE(order_slope({SamplerKind::unipc, 3}), 2.5);
}

TEST(Euler, TwoPeakBasin) {
  const DenoiserHandle d(oracle_denoiser(two_peak_dirac()));
  for (double x_T : {0.5, 3.0, 40.0}) {
    const auto grid = build_grid(GridKind::polynomial, 256, 0.002, kSigmaMax);
    EXPECT_NEAR(euler_solve(d, grid, Vec{x_T}).x[0], 1.0, 1e-6);
    EXPECT_NEAR(euler_solve(d, grid, Vec{-x_T}).x[0], -1.0, 1e-6);
  }
}

TEST(Euler, DetectsDivergence) {
  const DenoiserHandle d([](std::span<const double> x, double sigma) {
    return sigma < 1.0 ? Vec(x.size(), NAN) : Vec(x.size(), 0.0);
  });
  try {
    euler_solve(d, build_grid(GridKind::polynomial, 16, 0.002, kSigmaMax), Vec{1.0});
    FAIL() << "expected NumericalDivergence";
  } catch (const NumericalDivergence& e) {
    EXPECT_GT(e.step_index, 0u);
  }
}

TEST(Heun, AgreesWithDenseEuler) {
  const auto gmm = benchmark_gmm();
  const DenoiserHandle d(oracle_denoiser(gmm));
  Rng rng(9);
  for (int i = 0; i < 5; ++i) {
    const Vec x_T = standard_init(2, kSigmaMax, rng);
    const Vec h = heun_solve(d, build_grid(GridKind::polynomial, 256, 0.002, kSigmaMax), x_T).x;
    const Vec e = euler_solve(d, build_grid(GridKind::polynomial, 4096, 0.002, kSigmaMax), x_T).x;
    EXPECT_LT(l2_distance(h, e), 1e-3);
  }
}

TEST(ExponentialIntegrator, FirstOrderStepFormula) {
  // m = 1: x_{i+1} = e^{-h} x_i + (1 - e^{-h}) D_i.
  const Vec w = exponential_integrator_weights(Vec{-std::log(2.0)}, -std::log(2.0), -std::log(0.5));
  const double h = std::log(4.0);
  EXPECT_NEAR(w[0], 1.0 - std::exp(-h), 1e-15);
}

TEST(ExponentialIntegrator, WeightsIntegratePolynomialsExactly) {
  // Compare against composite Simpson quadrature of e^{lam - lam_to} P(lam).
  const Vec nodes = {-1.3, -0.9, -0.55, -0.2};
  const double from = -0.2, to = 0.15;
  const Vec w = exponential_integrator_weights(nodes, from, to);
  for (int degree = 0; degree < 4; ++degree) {
    auto p = [&](double l) { return std::pow(l + 0.4, degree); };
    double exact = 0.0;
    const int m = 20000;
    const double step = (to - from) / m;
    for (int i = 0; i <= m; ++i) {
      const double l = from + i * step;
      const double c = (i == 0 || i == m) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      exact += c * std::exp(l - to) * p(l);
    }
    exact *= step / 3.0;
    double got = 0.0;
    for (std::size_t j = 0; j < nodes.size(); ++j) got += w[j] * p(nodes[j]);
    EXPECT_NEAR(got, exact, 1e-12) << "degree " << degree;
  }
}

TEST(DpmSolver, OneStepDiracIsExact) {
  const DenoiserHandle d(oracle_denoiser(dirac({2.5})));
  const auto grid = grid_from_sigmas({10.0, 1.0, 0.0});
  // First step lands exactly on the analytic trajectory x0 + (sigma_1 / sigma_0)(x_T - x0).
  Trajectory trace;
  dpmpp_solve(d, grid, Vec{7.5}, 1, &trace);
  EXPECT_NEAR(trace.records[1].x[0], 2.5 + 0.1 * 5.0, 1e-14);
}

TEST(UniPc, AgreesWithDpmAt64Steps) {
  const auto gmm = benchmark_gmm();
  const DenoiserHandle d(oracle_denoiser(gmm));
  Rng rng(4);
  std::vector<double> dists;
  for (int i = 0; i < 32; ++i) {
    const Vec x_T = standard_init(2, kSigmaMax, rng);
    const auto grid = build_grid(GridKind::polynomial, 64, 0.002, kSigmaMax);
    dists.push_back(l2_distance(unipc_solve(d, grid, x_T, 3).x, dpmpp_solve(d, grid, x_T, 3).x));
  }
  std::sort(dists.begin(), dists.end());
  EXPECT_LT(dists[dists.size() / 2], 1e-3);
}

TEST(Solvers, DeterministicRepeatability) {
  const DenoiserHandle d(oracle_denoiser(benchmark_gmm()));
  const auto grid = build_grid(GridKind::polynomial, 20, 0.002, kSigmaMax);
  for (const auto& spec : kDeterministic) {
    EXPECT_EQ(solve(spec, d, grid, Vec{3.0, -9.0}).x, solve(spec, d, grid, Vec{3.0, -9.0}).x);
  }
}

TEST(Sde, ZeroLengthGridLeavesInput) {
  Rng rng(1);
  const DenoiserHandle d(oracle_denoiser(benchmark_gmm()));
  StepGrid empty{{0.0}};
  EXPECT_EQ(sde_euler_maruyama(d, empty, Vec{1.0, 2.0}, rng).x, (Vec{1.0, 2.0}));
}

TEST(Sde, NoiselessHalfDriftIsEuler) {
  Rng rng(2);
  const DenoiserHandle d(oracle_denoiser(benchmark_gmm()));
  const auto grid = build_grid(GridKind::polynomial, 64, 0.002, kSigmaMax);
  Trajectory a, b;
  sde_euler_maruyama(d, grid, Vec{10.0, -20.0}, rng, {0.5, 0.0}, &a);
  euler_solve(d, grid, Vec{10.0, -20.0}, &b);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_LT(l2_distance(a.records[i].x, b.records[i].x), 1e-12);
}

TEST(Sde, MarginalMatchingOnGaussianData) {
  const auto gmm = single_gaussian({1.0}, kSigmaData);
  const DenoiserHandle d(oracle_denoiser(gmm));
  const auto grid = build_grid(GridKind::polynomial, 256, 0.002, kSigmaMax);
  Rng rng(77);
  const int n = 20000;
  double mean = 0, sq = 0;
  Vec xs(n);
  for (int i = 0; i < n; ++i) {
    xs[i] = sde_euler_maruyama(d, grid, exact_prior_init(gmm, kSigmaMax, rng), rng).x[0];
    mean += xs[i];
  }
  mean /= n;
  for (double v : xs) sq += (v - mean) * (v - mean);
  EXPECT_NEAR(mean, 1.0, 0.02);
  EXPECT_NEAR(std::sqrt(sq / n), kSigmaData, 0.03 * kSigmaData);
}

TEST(Guidance, NoneIsPassthrough) {
  DenoiserHandle base(oracle_denoiser(benchmark_gmm()));
  auto g = guided_denoiser(base, GuidanceSpec{});
  EXPECT_EQ(g(Vec{0.1, 0.2}, 1.0), base(Vec{0.1, 0.2}, 1.0));
  EXPECT_EQ(g.nfe(), 1u);
}

TEST(Guidance, CfgScaleOneMatchesConditional) {
  const auto gmm = benchmark_gmm();
  const DenoiserHandle cond(oracle_denoiser(conditional_restrict(gmm, 1)));
  const DenoiserHandle uncond(oracle_denoiser(gmm));
  GuidanceSpec spec{GuidanceMode::cfg, 1.0};
  auto guided = guided_denoiser(cond, spec, uncond);
  const auto grid = build_grid(GridKind::polynomial, 32, 0.002, kSigmaMax);
  Trajectory a, b;
  const auto r = dpmpp_solve(guided, grid, Vec{5.0, 5.0}, 3, &a);
  dpmpp_solve(cond, grid, Vec{5.0, 5.0}, 3, &b);
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_LT(l2_distance(a.records[i].x, b.records[i].x), 1e-12);
  EXPECT_EQ(r.nfe, 64u);
}

TEST(Guidance, IntervalGatesEvaluationsAndNfe) {
  const auto gmm = benchmark_gmm();
  const DenoiserHandle cond(oracle_denoiser(conditional_restrict(gmm, 0)));
  const DenoiserHandle uncond(oracle_denoiser(gmm));
  GuidanceSpec spec{GuidanceMode::cfg, 4.0, 0.5, 5.0};
  auto guided = guided_denoiser(cond, spec, uncond);
  const auto grid = build_grid(GridKind::polynomial, 32, 0.002, kSigmaMax);
  std::uint64_t inside = 0;
  for (std::size_t i = 0; i + 1 < grid.sigmas.size(); ++i) inside += spec.active_at(grid.sigmas[i]);
  const auto r = euler_solve(guided, grid, Vec{1.0, 1.0});
  EXPECT_EQ(r.nfe, 32u + inside);
  EXPECT_EQ(guided(Vec{0.3, 0.3}, 10.0), cond(Vec{0.3, 0.3}, 10.0));
}

TEST(Guidance, MissingAuxiliary) {
  const DenoiserHandle base(oracle_denoiser(benchmark_gmm()));
  EXPECT_THROW(guided_denoiser(base, GuidanceSpec{GuidanceMode::cfg, 2.0}), MissingAuxiliary);
  EXPECT_THROW(guided_denoiser(base, GuidanceSpec{GuidanceMode::classifier, 2.0}), MissingAuxiliary);
}

TEST(Guidance, ClassifierScaleOneEqualsRestrictedDenoiser) {
  const auto gmm = benchmark_gmm();
  const DenoiserHandle uncond(oracle_denoiser(gmm));
  ClassifierGradFn grad = [gmm](std::span<const double> x, double s) { return gmm_log_posterior_grad(gmm, 2, x, s); };
  auto guided = guided_denoiser(uncond, GuidanceSpec{GuidanceMode::classifier, 1.0}, grad);
  const auto restricted = conditional_restrict(gmm, 2);
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const double s = testing::log_uniform(rng, 2e-3, 80.0);
    const Vec x = perturb(gmm_sample(gmm, rng, 1).front(), s, rng);
    EXPECT_LT(l2_distance(guided(x, s), gmm_denoise(restricted, x, s)), 1e-8 * std::max(1.0, norm(x)));
  }
}

TEST(WarmStart, Limits) {
  Rng rng(6);
  const Vec y = {0.4, -0.6};
  EXPECT_LT(l2_distance(warm_start_init(y, 1e-12, rng), y), 1e-10);
  Rng a(7), b(7);
  EXPECT_EQ(warm_start_init(Vec{0.0, 0.0}, 80.0, a), standard_init(2, 80.0, b));
  EXPECT_THROW(warm_start_init(y, 0.0, rng), DomainError);
}

TEST(ExactPrior, MatchesPerturbedMixtureMoments) {
  const auto gmm = single_gaussian({2.0}, 0.5);
  Rng rng(8);
  double mean = 0, sq = 0;
  const int n = 50000;
  Vec xs(n);
  for (int i = 0; i < n; ++i) mean += (xs[i] = exact_prior_init(gmm, 3.0, rng)[0]);
  mean /= n;
  for (double v : xs) sq += (v - mean) * (v - mean);
  EXPECT_NEAR(mean, 2.0, 0.05);
  EXPECT_NEAR(std::sqrt(sq / n), std::sqrt(0.25 + 9.0), 0.03);
}

}  // namespace
}  // namespace scoreflow
