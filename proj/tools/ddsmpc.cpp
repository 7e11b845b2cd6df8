// Copyright 2026 the ddsmpc authors
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line harness for the benchmark studies: sample-size tables,
// uncertainty-set training and calibration, single closed-loop simulations,
// controller sweeps, Monte Carlo guarantee studies and the 2-D geometry dump.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "ddsmpc/bench.hpp"

namespace {

using namespace ddsmpc;

struct CommonOptions {
  std::string config_path;
  std::string outdir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  double scale = 0.0;
  bool scale_set = false;
};

void add_common(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--config", opt.config_path, "benchmark config JSON file");
  cmd->add_option("--out", opt.outdir, "output directory for CSV/JSON artifacts");
  cmd->add_option("--seed", opt.seed, "override the config's seed list with one seed")
      ->each([&opt](const std::string&) { opt.seed_set = true; });
  cmd->add_option("--scale", opt.scale, "override the Monte Carlo scale factor")
      ->each([&opt](const std::string&) { opt.scale_set = true; });
}

BenchmarkConfig make_config(const CommonOptions& opt) {
  BenchmarkConfig config;
  if (!opt.config_path.empty()) config = load_benchmark_config(opt.config_path);
  if (!opt.outdir.empty()) config.outdir = opt.outdir;
  if (opt.seed_set) config.seeds = {opt.seed};
  if (opt.scale_set) config.scale = opt.scale;
  return config;
}

// Training and calibration pools for the spec'd benchmark disturbance model.
TrainedArtifacts train_from_config(const BenchmarkConfig& config, Eigen::Index H, bool calibrated) {
  const std::uint64_t seed = config.seeds.front();
  Ar1Params p = config.disturbance;
  p.seed = detail::mix_seed(seed, 11);
  ScenarioSet train_raw = generate_ar1(p, config.n_train, H, 1);
  p.seed = detail::mix_seed(seed, 12);
  ScenarioSet calib_raw = generate_ar1(p, calibration_sample_size(config.guarantee), H, 1);
  TrainedArtifacts art = train_calibrated_set(train_raw, calib_raw, two_mass_spring().saturation,
                                              config.guarantee, config.nu);
  if (!calibrated) art.set.radius = art.theta_pre;
  return art;
}

void write_set_json(const TrainedArtifacts& art, const std::string& outdir, const std::string& filename) {
  nlohmann::json j = set_to_json(art.set);
  j["theta_pre"] = art.theta_pre;
  j["theta_tilde"] = art.calibration.theta_tilde;
  j["n_calib"] = art.calibration.n_used;
  if (outdir.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::filesystem::create_directories(outdir);
  std::ofstream out(outdir + "/" + filename);
  out << j.dump(2) << '\n';
  std::cout << "wrote " << outdir << "/" << filename << '\n';
}

int cmd_sample_size(const CommonOptions& opt) {
  BenchmarkConfig config = make_config(opt);
  auto rows = sample_size_table(config.guarantee, config.horizons);
  std::printf("H,epsilon,beta,n_ssmpc,n_rmpc,n_calib\n");
  for (const auto& r : rows) {
    std::printf("%lld,%.17g,%.17g,%lld,%lld,%lld\n", (long long)r.H, r.guarantee.epsilon, r.guarantee.beta,
                (long long)r.n_ssmpc, (long long)r.n_rmpc, (long long)r.n_calib);
  }
  if (!config.outdir.empty()) {
    std::filesystem::create_directories(config.outdir);
    save_sample_size_csv(rows, config.outdir + "/sample_size.csv");
    std::cout << "wrote " << config.outdir << "/sample_size.csv\n";
  }
  return 0;
}

int cmd_train_set(const CommonOptions& opt, bool calibrated) {
  BenchmarkConfig config = make_config(opt);
  TrainedArtifacts art = train_from_config(config, config.horizons.front(), calibrated);
  std::printf("n_train=%lld nu=%g theta_pre=%.12g theta_tilde=%.12g support_vectors=%lld\n",
              (long long)config.n_train, config.nu, art.theta_pre, art.calibration.theta_tilde,
              (long long)art.set.sv_points.rows());
  write_set_json(art, config.outdir, calibrated ? "calibrated_set.json" : "trained_set.json");
  return 0;
}

int cmd_simulate(const CommonOptions& opt) {
  BenchmarkConfig config = make_config(opt);
  config.controllers = {config.controllers.front()};
  config.horizons = {config.horizons.front()};
  config.seeds = {config.seeds.front()};
  BenchmarkResult res = run_benchmark(config);
  const BenchmarkCell& c = res.cells.front();
  if (!c.error.empty()) {
    std::cerr << "simulation failed: " << c.error << '\n';
    return 1;
  }
  std::printf("%s %s H=%lld seed=%llu: cost_to_go=%.6g solve_ms=%.3g violation=%.4g fallback=%.4g\n",
              config.name.c_str(), c.controller.c_str(), (long long)c.H, (unsigned long long)c.seed,
              c.metrics.avg_cost_to_go, c.metrics.avg_solve_ms, c.metrics.violation_rate, c.metrics.fallback_rate);
  if (!config.outdir.empty()) std::cout << "trace artifacts in " << config.outdir << '\n';
  return 0;
}

int cmd_benchmark(const CommonOptions& opt) {
  BenchmarkConfig config = make_config(opt);
  BenchmarkResult res = run_benchmark(config);
  std::printf("controller,H,seed,sample_size,avg_cost_to_go,avg_solve_ms,violation_rate,fallback_rate,energy,error\n");
  for (const auto& c : res.cells) {
    std::printf("%s,%lld,%llu,%lld,%.6g,%.4g,%.4g,%.4g,%.6g,%s\n", c.controller.c_str(), (long long)c.H,
                (unsigned long long)c.seed, (long long)c.sample_size, c.metrics.avg_cost_to_go,
                c.metrics.avg_solve_ms, c.metrics.violation_rate, c.metrics.fallback_rate, c.energy,
                c.error.c_str());
  }
  if (!config.outdir.empty()) {
    std::filesystem::create_directories(config.outdir);
    save_benchmark_csv(config.name, res, config.outdir + "/" + config.name + "_aggregate.csv");
    std::cout << "wrote " << config.outdir << "/" << config.name << "_aggregate.csv\n";
  }
  return 0;
}

int cmd_monte_carlo(const CommonOptions& opt) {
  BenchmarkConfig config = make_config(opt);
  MonteCarloResult res = run_monte_carlo_guarantee(config);
  std::printf("method,n_train,n_calib,sample_size,runs,beta_hat,mean_eps,var_eps\n");
  for (const auto& r : res.rows) {
    std::printf("%s,%lld,%lld,%lld,%lld,%.6g,%.6g,%.6g\n", r.method.c_str(), (long long)r.n_train,
                (long long)r.n_calib, (long long)r.sample_size, (long long)r.runs, r.beta_hat, r.mean_eps,
                r.var_eps);
  }
  if (!config.outdir.empty()) {
    std::filesystem::create_directories(config.outdir);
    save_monte_carlo_csv(res, config.outdir + "/monte_carlo.csv");
    std::cout << "wrote " << config.outdir << "/monte_carlo.csv\n";
  }
  return 0;
}

int cmd_example_2d(const CommonOptions& opt) {
  BenchmarkConfig config = make_config(opt);
  Example2dResult res = run_example_2d(config.guarantee, config.seeds.front(), config.nu);
  std::printf("n_calib=%lld n_rect=%lld theta_pre=%.12g theta_post=%.12g area_ratio=%.6g\n",
              (long long)res.n_calib, (long long)res.n_rect, res.theta_pre, res.theta_post, res.area_ratio);
  if (!config.outdir.empty()) {
    save_example_2d(res, config.outdir);
    std::cout << "wrote geometry dump to " << config.outdir << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"data-driven robust stochastic MPC benchmark harness"};
  app.require_subcommand(1);

  CommonOptions opt;
  CLI::App* sample_size = app.add_subcommand("sample-size", "print scenario/calibration sample-size table as CSV");
  CLI::App* train_set = app.add_subcommand("train-set", "train the SVC uncertainty set and dump it as JSON");
  CLI::App* calibrate = app.add_subcommand("calibrate", "train and calibrate the uncertainty set radius");
  CLI::App* simulate = app.add_subcommand("simulate", "run one closed-loop cell and print its metrics");
  CLI::App* benchmark = app.add_subcommand("benchmark", "run the configured controller sweep");
  CLI::App* monte_carlo = app.add_subcommand("monte-carlo", "run the coverage guarantee study");
  CLI::App* example_2d = app.add_subcommand("example-2d", "run the 2-D set-construction example");
  for (CLI::App* cmd : {sample_size, train_set, calibrate, simulate, benchmark, monte_carlo, example_2d}) {
    add_common(cmd, opt);
  }

  CLI11_PARSE(app, argc, argv);
  try {
    if (sample_size->parsed()) return cmd_sample_size(opt);
    if (train_set->parsed()) return cmd_train_set(opt, false);
    if (calibrate->parsed()) return cmd_train_set(opt, true);
    if (simulate->parsed()) return cmd_simulate(opt);
    if (benchmark->parsed()) return cmd_benchmark(opt);
    if (monte_carlo->parsed()) return cmd_monte_carlo(opt);
    if (example_2d->parsed()) return cmd_example_2d(opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
