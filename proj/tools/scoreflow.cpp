// Command-line front end for sampling, training, grid search and evaluation.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "scoreflow/harness.hpp"
#include "scoreflow/train.hpp"

namespace fs = std::filesystem;
using namespace scoreflow;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kConfig = 2, kDivergence = 3, kPartialGrid = 4 };

std::string load_text(const std::string& path) {
  try {
    return read_text_file(path);
  } catch (const Error& e) {
    throw ConfigError("", 0, e.what());
  }
}

void print_row(const MetricsRow& r) {
  std::cout << kCsvHeader << '\n' << csv_row(r) << '\n';
}

int cmd_sample(const std::string& config_path, const std::string& out, std::size_t threads) {
  const RunConfig cfg = parse_config(load_text(config_path));
  const SampleRun run = run_sample(cfg, {threads, nullptr});
  const fs::path dir = out.empty() ? fs::path(cfg.outputs.dir) : fs::path(out);
  emit_report(GridReport{{run.row}, {}, select_best({run.row})}, dir, cfg.outputs.formats);
  write_samples(dir / "samples.csv", run.samples);
  write_samples(dir / "reference.csv", run.reference);
  print_row(run.row);
  return kOk;
}

int cmd_train(const std::string& config_path, const std::string& out) {
  const RunConfig cfg = parse_config(load_text(config_path));
  const auto result = train::train_loop(cfg.train, train::TrainData{make_data_gmm(cfg.data), cfg.data.sigma_obs});
  const auto& model = cfg.model.use_ema ? result.ema : result.model;
  train::save_model(model, out);
  std::cout << "objective " << train::to_string(cfg.train.objective) << ", " << model.parameter_count()
            << " parameters, " << cfg.train.steps << " steps\n";
  if (!result.curve.empty()) {
    std::cout << "loss first " << train::smoothed_loss(result.curve, 5, false) << ", last "
              << train::smoothed_loss(result.curve, 5, true) << '\n';
  }
  std::cout << "wrote " << out << '\n';
  return kOk;
}

int cmd_grid(const std::string& config_path, const std::string& out, std::size_t threads) {
  const GridSpec spec = parse_grid(load_text(config_path));
  const GridReport report = grid_search(spec, {threads, {}});
  const fs::path dir = out.empty() ? fs::path(spec.base.outputs.dir) : fs::path(out);
  for (const auto& f : emit_report(report, dir, spec.base.outputs.formats)) std::cout << "wrote " << f.string() << '\n';
  for (const auto& [metric, id] : report.best) std::cout << "best " << metric << ": " << id << '\n';
  for (const auto& f : report.failures) std::cerr << "cell " << f.run_id << " failed: " << f.message << '\n';
  if (report.rows.empty()) {
    std::cerr << "every grid cell failed\n";
    return kFailure;
  }
  return report.failures.empty() ? kOk : kPartialGrid;
}

int cmd_eval(const std::string& samples_path, const std::string& reference_path, std::size_t projections,
             std::uint64_t seed) {
  const auto samples = read_samples(samples_path);
  const auto reference = read_samples(reference_path);
  Rng proj(seed);
  nlohmann::json j;
  j["samples"] = samples.size();
  j["reference"] = reference.size();
  j["sw2"] = metric_sliced_w2(samples, reference, projections, proj);
  const MomentErrors m = metric_moments(samples, reference);
  j["mean_err"] = m.mean_err;
  j["cov_err"] = m.cov_err;
  Vec axes;
  for (std::size_t k = 0; k < samples.front().size(); ++k) {
    Vec e(samples.front().size(), 0.0);
    e[k] = 1.0;
    axes.push_back(metric_w2_1d(project(samples, e), project(reference, e)));
  }
  j["w2_axes"] = axes;
  std::cout << j.dump(2) << '\n';
  return kOk;
}

int cmd_order(const std::string& config_path, std::vector<std::size_t> steps) {
  const RunConfig cfg = parse_config(load_text(config_path));
  const SolverSpec solver{cfg.sampler.kind, cfg.sampler.order};
  const OrderResult r = measure_order(solver, make_data_gmm(cfg.data), std::move(steps), cfg.sampler.grid,
                                      cfg.sampler.sigma_min, cfg.sampler.sigma_max, cfg.sampler.rho);
  std::cout << "steps,error\n";
  for (std::size_t i = 0; i < r.steps.size(); ++i) std::cout << r.steps[i] << ',' << config_detail::fmt(r.errors[i]) << '\n';
  if (r.slope) std::cout << "slope " << *r.slope << '\n';
  std::cout << "status " << r.status << '\n';
  return kOk;
}

int cmd_trajectory(const std::string& config_path, const std::string& out) {
  const RunConfig cfg = parse_config(load_text(config_path));
  const auto trajectories = record_trajectories(cfg);
  const fs::path path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text(path, trajectories_to_json(trajectories).dump() + "\n");
  std::cout << "wrote " << trajectories.size() << " trajectories to " << out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scoreflow: score-based sampling and training on analytic mixtures"};
  app.require_subcommand(1);
  std::string config, out, samples, reference;
  std::size_t threads = 0, projections = 64;
  std::uint64_t seed = 0;
  std::vector<std::size_t> steps{8, 16, 32, 64, 128, 256};

  auto* sample = app.add_subcommand("sample", "draw samples for one configuration and score them");
  sample->add_option("--config", config, "run configuration file")->required();
  sample->add_option("--out", out, "output directory (default: outputs.dir)");
  sample->add_option("--threads", threads, "worker threads (default: SCOREFLOW_MAX_PARALLEL or all cores)");

  auto* train_cmd = app.add_subcommand("train", "train an MLP denoiser and save it");
  train_cmd->add_option("--config", config, "run configuration file")->required();
  train_cmd->add_option("--out", out, "model file")->required();

  auto* grid = app.add_subcommand("grid", "run every cell of a grid file");
  grid->add_option("--config", config, "grid configuration file")->required();
  grid->add_option("--out", out, "output directory (default: outputs.dir)");
  grid->add_option("--threads", threads, "concurrent cells (default: SCOREFLOW_MAX_PARALLEL or all cores)");

  auto* eval = app.add_subcommand("eval", "compare two sample files");
  eval->add_option("--samples", samples, "samples file")->required();
  eval->add_option("--reference", reference, "reference samples file")->required();
  eval->add_option("--projections", projections, "random projections for SW2");
  eval->add_option("--seed", seed, "projection seed");

  auto* order = app.add_subcommand("order", "measure the convergence order on single-Gaussian data");
  order->add_option("--config", config, "run configuration file")->required();
  order->add_option("--steps", steps, "grid sizes")->delimiter(',');

  auto* trajectory = app.add_subcommand("trajectory", "record PF-ODE trajectories");
  trajectory->add_option("--config", config, "run configuration file")->required();
  trajectory->add_option("--out", out, "JSON output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*sample) return cmd_sample(config, out, threads);
    if (*train_cmd) return cmd_train(config, out);
    if (*grid) return cmd_grid(config, out, threads);
    if (*eval) return cmd_eval(samples, reference, projections, seed);
    if (*order) return cmd_order(config, steps);
    if (*trajectory) return cmd_trajectory(config, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericalDivergence& e) {
    std::cerr << "numerical divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
