#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <mutex>
#include <numeric>
#include <thread>

#include "scoreflow/harness/config.hpp"
#include "scoreflow/harness/metrics.hpp"

namespace scoreflow {

/// Worker cap from SCOREFLOW_MAX_PARALLEL (default: hardware concurrency).
inline std::size_t max_parallel() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SCOREFLOW_MAX_PARALLEL")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) n = static_cast<std::size_t>(v);
  }
  return n;
}

/// Runs body(i) for i in [0, n) on up to `threads` workers. The first
/// exception (lowest index) is rethrown after all workers stop.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_at = n;
  std::exception_ptr error;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (i < failed_at) failed_at = i, error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct MetricsRow {
  std::string run_id;
  std::string sampler;
  std::string grid;
  std::size_t steps = 0;
  std::uint64_t nfe = 0;
  int order = 0;
  double guidance_scale = 1.0;
  std::uint64_t seed = 0;
  double sw2 = 0.0;
  double mean_err = 0.0;
  double cov_err = 0.0;
  double mode_mass_err = 0.0;
  double wall_ms = 0.0;
  Vec w2_axes;  // 1-D W2 along each coordinate axis

  bool same_results(const MetricsRow& o) const {
    return run_id == o.run_id && sampler == o.sampler && grid == o.grid && steps == o.steps && nfe == o.nfe &&
           order == o.order && guidance_scale == o.guidance_scale && seed == o.seed && sw2 == o.sw2 &&
           mean_err == o.mean_err && cov_err == o.cov_err && mode_mass_err == o.mode_mass_err && w2_axes == o.w2_axes;
  }
};

/// Everything needed to draw samples for one configuration.
struct ResolvedModel {
  DenoiserHandle denoiser;     // guidance already applied
  OracleGMM data;              // training / data distribution
  OracleGMM reference;         // distribution the samples should follow
};

namespace run_detail {

inline DenoiserFn oracle_model(const RunConfig& cfg, const OracleGMM& gmm) {
  if (cfg.model.frame == FrameKind::edm && cfg.model.parameterization == Parameterization::denoiser)
    return oracle_denoiser(gmm);
  return edm_denoiser_from_native(oracle_native_model(gmm, cfg.model.parameterization, cfg.model.frame), cfg.model.frame);
}

}  // namespace run_detail

inline train::MlpDenoiser train_model(const RunConfig& cfg) {
  const OracleGMM data = make_data_gmm(cfg.data);
  auto result = train::train_loop(cfg.train, train::TrainData{data, cfg.data.sigma_obs});
  return cfg.model.use_ema ? std::move(result.ema) : std::move(result.model);
}

/// Builds the (guided) denoiser and the reference law. `trained` overrides
/// loading or training for model.kind = mlp / train.
inline ResolvedModel resolve_model(const RunConfig& cfg, const train::MlpDenoiser* trained = nullptr) {
  validate(cfg);
  const OracleGMM data = make_data_gmm(cfg.data);
  const bool observed = !cfg.data.observation.empty();
  const auto& label = cfg.guidance.label;
  OracleGMM reference = observed ? gmm_observation_posterior(data, cfg.data.observation, *cfg.data.sigma_obs)
                        : label  ? conditional_restrict(data, *label)
                                 : data;
  const GuidanceSpec& g = cfg.guidance.spec;

  if (cfg.model.kind == ModelKind::oracle) {
    // The oracle restricted to the label / observation plays the conditional model.
    DenoiserHandle base(run_detail::oracle_model(cfg, reference));
    GuidanceAux aux;
    if (g.mode == GuidanceMode::cfg) {
      aux = DenoiserHandle(run_detail::oracle_model(cfg, data));
    } else if (g.mode == GuidanceMode::classifier) {
      base = DenoiserHandle(run_detail::oracle_model(cfg, data));
      aux = ClassifierGradFn([data, l = *label](std::span<const double> x, double s) {
        return gmm_log_posterior_grad(data, l, x, s);
      });
    }
    return {guided_denoiser(base, g, aux), data, std::move(reference)};
  }

  const train::MlpDenoiser model = trained ? *trained : cfg.model.kind == ModelKind::mlp ? train::load_model(cfg.model.path)
                                                                                         : train_model(cfg);
  const auto& spec = model.spec();
  if (spec.dim != data.dim()) throw ValidationError("model.path", 0, "model dimension does not match the data");
  Vec condition;
  switch (spec.conditioning) {
    case train::Conditioning::none:
      if (label || observed)
        throw ValidationError("guidance.label", 0, "an unconditional model cannot be conditioned on a label or observation");
      break;
    case train::Conditioning::adaln:
      if (spec.cond_dim != data.size()) throw ValidationError("model.path", 0, "label count does not match the data mixture");
      if (label) condition = train::one_hot(*label, spec.cond_dim);
      break;
    case train::Conditioning::channel_concat:
      if (!observed) throw ValidationError("data.observation", 0, "channel_concat models need data.observation");
      condition = cfg.data.observation;
      break;
  }
  DenoiserHandle base(model.denoiser(condition));
  GuidanceAux aux;
  if (g.mode == GuidanceMode::cfg) aux = DenoiserHandle(model.denoiser());
  return {guided_denoiser(base, g, aux), data, std::move(reference)};
}

inline StepGrid grid_for(const RunConfig& cfg) {
  const double top = cfg.init.kind == InitKind::warm_start ? cfg.init.sigma_start : cfg.sampler.sigma_max;
  return build_grid(cfg.sampler.grid, cfg.sampler.steps, cfg.sampler.sigma_min, top, cfg.sampler.rho);
}

inline Vec initial_point(const RunConfig& cfg, const ResolvedModel& m, Rng& rng) {
  switch (cfg.init.kind) {
    case InitKind::standard: return standard_init(m.data.dim(), cfg.sampler.sigma_max, rng);
    case InitKind::exact_prior: return exact_prior_init(m.reference, cfg.sampler.sigma_max, rng);
    case InitKind::warm_start:
      return warm_start_init(cfg.init.center.empty() ? cfg.data.observation : cfg.init.center, cfg.init.sigma_start, rng);
  }
  throw ValidationError("init.kind", 0, "unknown init kind");
}

inline std::uint64_t sample_seed(std::uint64_t seed, std::size_t i) { return derive_seed(seed, i); }
inline std::uint64_t reference_seed(std::uint64_t seed) { return derive_seed(seed, ~std::uint64_t{0}); }
inline std::uint64_t projection_seed(std::uint64_t seed) { return derive_seed(seed, ~std::uint64_t{0} - 1); }

struct SampleRun {
  std::vector<Vec> samples;
  std::vector<Vec> reference;  // draws from the reference law used for the metrics
  MetricsRow row;
};

struct SampleOptions {
  std::size_t threads = 0;  // 0: max_parallel()
  const train::MlpDenoiser* trained = nullptr;
};

/// Draws cfg.sampler.samples points, each from its own derived seed, and
/// scores them against the reference law.
inline SampleRun run_sample(const RunConfig& cfg, SampleOptions opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const ResolvedModel model = resolve_model(cfg, opt.trained);
  const StepGrid grid = grid_for(cfg);
  const SolverSpec spec{cfg.sampler.kind, cfg.sampler.order};
  const std::size_t n = cfg.sampler.samples;
  SampleRun out;
  out.samples.resize(n);
  std::vector<std::uint64_t> nfe(n);
  parallel_for(n, opt.threads ? opt.threads : max_parallel(), [&](std::size_t i) {
    Rng rng(sample_seed(cfg.seed, i));
    DenoiserHandle d = model.denoiser;
    d.reset_nfe();
    const Vec x_T = initial_point(cfg, model, rng);
    SolveResult r;
    try {
      r = solve(spec, d, grid, x_T, &rng);
    } catch (const NumericalDivergence& e) {
      throw NumericalDivergence(cfg.outputs.run_id + " sample " + std::to_string(i) + ": " + e.where, e.step_index);
    }
    out.samples[i] = r.x;
    nfe[i] = r.nfe;
  });
  if (std::adjacent_find(nfe.begin(), nfe.end(), std::not_equal_to<>()) != nfe.end())
    throw Error("run_sample: denoiser evaluation count differs between samples");

  Rng ref_rng(reference_seed(cfg.seed));
  const std::size_t n_ref = cfg.metrics.reference_samples ? cfg.metrics.reference_samples : n;
  out.reference = gmm_sample(model.reference, ref_rng, n_ref);
  const std::vector<Vec>& reference = out.reference;
  Rng proj(projection_seed(cfg.seed));
  MetricsRow& row = out.row;
  row.run_id = cfg.outputs.run_id;
  row.sampler = std::string(to_string(cfg.sampler.kind));
  row.grid = std::string(to_string(cfg.sampler.grid));
  row.steps = cfg.sampler.steps;
  row.nfe = nfe.front();
  row.order = cfg.sampler.order;
  row.guidance_scale = cfg.guidance.spec.mode == GuidanceMode::none ? 1.0 : cfg.guidance.spec.scale;
  row.seed = cfg.seed;
  row.sw2 = metric_sliced_w2(out.samples, reference, cfg.metrics.projections, proj);
  const MomentErrors me = metric_moments(out.samples, reference);
  row.mean_err = me.mean_err;
  row.cov_err = me.cov_err;
  row.mode_mass_err = metric_mode_mass(model.data, out.samples, reference);
  for (std::size_t j = 0; j < model.data.dim(); ++j) {
    Vec axis(model.data.dim(), 0.0);
    axis[j] = 1.0;
    row.w2_axes.push_back(metric_w2_1d(project(out.samples, axis), project(reference, axis)));
  }
  row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

/// Trajectories of the first cfg.sampler.samples draws (same seeds as run_sample).
inline std::vector<Trajectory> record_trajectories(const RunConfig& cfg) {
  const ResolvedModel model = resolve_model(cfg);
  const StepGrid grid = grid_for(cfg);
  const SolverSpec spec{cfg.sampler.kind, cfg.sampler.order};
  std::vector<Trajectory> out(cfg.sampler.samples);
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng(sample_seed(cfg.seed, i));
    DenoiserHandle d = model.denoiser;
    solve(spec, d, grid, initial_point(cfg, model, rng), &rng, &out[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

struct CellFailure {
  std::string run_id;
  std::string message;
};

struct GridReport {
  std::vector<MetricsRow> rows;  // sorted by run_id
  std::vector<CellFailure> failures;
  std::map<std::string, std::string> best;  // metric -> run_id
};

struct GridCell {
  std::string run_id;
  RunConfig cfg;
};

inline std::size_t grid_size(const GridSpec& spec) {
  std::size_t n = 1;
  for (const auto& a : spec.axes) n *= a.values.size();
  return n;
}

/// Cartesian product in axis order; the last axis varies fastest.
inline std::vector<GridCell> expand_grid(const GridSpec& spec) {
  const std::size_t n = grid_size(spec);
  if (n > spec.max_cells)
    throw ValidationError("grid.max_cells", 0,
                          "grid has " + std::to_string(n) + " cells, above the cap of " + std::to_string(spec.max_cells));
  const int width = static_cast<int>(std::to_string(n).size());
  std::vector<GridCell> cells;
  for (std::size_t c = 0; c < n; ++c) {
    RunConfig cfg = spec.base;
    std::size_t rest = c;
    for (std::size_t a = spec.axes.size(); a-- > 0;) {
      const auto& axis = spec.axes[a];
      config_detail::apply(cfg, axis.key, axis.values[rest % axis.values.size()], 0);
      rest /= axis.values.size();
    }
    std::string id = std::to_string(c);
    id.insert(0, static_cast<std::size_t>(std::max(0, width - static_cast<int>(id.size()))), '0');
    cfg.outputs.run_id = spec.base.outputs.run_id + "-" + id;
    cells.push_back({cfg.outputs.run_id, std::move(cfg)});
  }
  return cells;
}

inline std::map<std::string, std::string> select_best(const std::vector<MetricsRow>& rows) {
  std::map<std::string, std::string> best;
  if (rows.empty()) return best;
  const std::pair<const char*, double MetricsRow::*> metrics[] = {
      {"sw2", &MetricsRow::sw2}, {"mean_err", &MetricsRow::mean_err}, {"cov_err", &MetricsRow::cov_err},
      {"mode_mass_err", &MetricsRow::mode_mass_err}};
  for (const auto& [name, field] : metrics) {
    const MetricsRow* arg = &rows.front();
    for (const auto& r : rows)
      if (r.*field < arg->*field) arg = &r;  // ties keep the lowest run_id
    best[name] = arg->run_id;
  }
  return best;
}

struct GridOptions {
  std::size_t threads = 0;                  // 0: max_parallel()
  std::optional<std::uint64_t> shuffle_seed;  // permute execution order (testing aid)
};

inline GridReport grid_search(const GridSpec& spec, GridOptions opt = {}) {
  std::vector<GridCell> cells = expand_grid(spec);
  std::vector<std::size_t> order(cells.size());
  std::iota(order.begin(), order.end(), 0);
  if (opt.shuffle_seed) {
    Rng rng(*opt.shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng.engine());
  }
  std::vector<std::optional<MetricsRow>> rows(cells.size());
  std::vector<std::optional<std::string>> errors(cells.size());
  parallel_for(cells.size(), opt.threads ? opt.threads : max_parallel(), [&](std::size_t k) {
    const std::size_t i = order[k];
    try {
      rows[i] = run_sample(cells[i].cfg, {1, nullptr}).row;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  GridReport report;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (rows[i]) report.rows.push_back(std::move(*rows[i]));
    if (errors[i]) report.failures.push_back({cells[i].run_id, *errors[i]});
  }
  report.best = select_best(report.rows);
  return report;
}

// ---------------------------------------------------------------------------
// Convergence order
// ---------------------------------------------------------------------------

struct OrderResult {
  std::vector<std::size_t> steps;
  Vec errors;
  std::optional<double> slope;  // nullopt: errors at the floating-point floor
  std::string status;
};

/// PF-ODE endpoint for single-component data started from x_T at sigma_max.
inline Vec single_gaussian_endpoint(const OracleGMM& gmm, std::span<const double> x_T, double sigma_max) {
  if (gmm.size() != 1) throw DomainError("measure_order: needs single-component data");
  const auto& c = gmm.component(0);
  const double k = c.std / std::sqrt(c.std * c.std + sigma_max * sigma_max);
  return axpby(1.0 - k, c.mean, k, x_T);
}

/// Least-squares slope of -log(error) against log(N).
inline double log_log_slope(const std::vector<std::size_t>& ns, const Vec& errs) {
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    mx += std::log(static_cast<double>(ns[i]));
    my += std::log(errs[i]);
  }
  mx /= static_cast<double>(ns.size());
  my /= static_cast<double>(ns.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    const double dx = std::log(static_cast<double>(ns[i])) - mx;
    sxy += dx * (std::log(errs[i]) - my);
    sxx += dx * dx;
  }
  return -sxy / sxx;
}

inline OrderResult measure_order(const SolverSpec& solver, const OracleGMM& gmm, std::vector<std::size_t> ns,
                                 GridKind grid = GridKind::polynomial, double sigma_min = 0.002, double sigma_max = 80.0,
                                 double rho = 7.0) {
  if (ns.size() < 4) throw InvalidParameter("measure_order: needs at least 4 grid sizes");
  std::sort(ns.begin(), ns.end());
  if (std::adjacent_find(ns.begin(), ns.end()) != ns.end()) throw InvalidParameter("measure_order: repeated grid size");
  if (solver.kind == SamplerKind::sde) throw InvalidParameter("measure_order: deterministic solvers only");
  const DenoiserHandle d(oracle_denoiser(gmm));
  Vec x_T = gmm.component(0).mean;
  for (auto& v : x_T) v += sigma_max;
  const Vec exact = single_gaussian_endpoint(gmm, x_T, sigma_max);
  OrderResult r;
  r.steps = ns;
  for (auto n : ns) r.errors.push_back(l2_distance(solve(solver, d, build_grid(grid, n, sigma_min, sigma_max, rho), x_T).x, exact));
  const double scale = std::max(1.0, norm(exact));
  if (std::all_of(r.errors.begin(), r.errors.end(), [&](double e) { return e <= 1e-12 * scale; })) {
    r.status = "skipped: errors at floating-point floor";
    return r;
  }
  if (std::any_of(r.errors.begin(), r.errors.end(), [](double e) { return !(e > 0.0) || !std::isfinite(e); }))
    throw DomainError("measure_order: degenerate error sequence");
  r.slope = log_log_slope(ns, r.errors);
  r.status = "ok";
  return r;
}

}  // namespace scoreflow
