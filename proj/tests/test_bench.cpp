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

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "ddsmpc/bench.hpp"

namespace ddsmpc {
namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& stem) : path(fs::temp_directory_path() / stem) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

TEST_CASE("two-mass-spring plant matches the published parameters") {
  BuiltinPlant p = two_mass_spring();
  Matrix A(4, 4);
  A << 1, 0, 0.1, 0, 0, 1, 0, 0.1, -2, 0.2, 1, 0, 0.5, -0.05, 0, 1;
  REQUIRE((p.model.A - A).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(p.model.B_u(2, 0) == 0.2);
  REQUIRE(p.model.B_u(0, 0) == 0.0);
  Vector bw(4);
  bw << 1.0, 0.5, 0.3, 0.4;
  REQUIRE((p.model.B_w - bw).cwiseAbs().maxCoeff() == 0.0);
  Vector x0(4);
  x0 << 0.2, 1, -0.1, 0.1;
  REQUIRE((p.x0 - x0).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((p.Q - 5.0 * Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(p.R(0, 0) == 1.0);
  REQUIRE((p.Q_f - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(p.f.maxCoeff() == 0.38);
  REQUIRE(p.f.minCoeff() == 0.38);
  REQUIRE(p.g.maxCoeff() == 1.6);
  REQUIRE(p.saturation == SaturationKind::kTanh);
  // Velocity rows only.
  for (Eigen::Index i = 0; i < 4; ++i) {
    REQUIRE(p.F(i, 0) == 0.0);
    REQUIRE(p.F(i, 1) == 0.0);
  }
}

TEST_CASE("building plant matches the published parameters") {
  BuiltinPlant p = building_energy();
  Matrix A(4, 4);
  A << 0.0167, 0.0048, 0.1245, 0.1409, 0.0005, 0.0002, 0.0039, 0.0044, 0.0253, 0.0073, 0.3321, 0.0617, 0.0244,
      0.0070, 0.0526, 0.3456;
  REQUIRE((p.model.A - A).cwiseAbs().maxCoeff() == 0.0);
  Vector bu(4), bw(4);
  bu << 0.0986, 0.0029, 0.0288, 0.0275;
  bw << 0.2536, 0.0070, 0.4450, 0.4477;
  REQUIRE((p.model.B_u - bu).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((p.model.B_w - bw).cwiseAbs().maxCoeff() == 0.0);
  Matrix bv(4, 2);
  bv << 0.2536, 0.4596, 0.0070, 0.9840, 0.4450, 0.1287, 0.4477, 0.1225;
  REQUIRE((p.model.B_v - bv).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(p.Q.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(p.R(0, 0) == 1.0);
  REQUIRE(p.g[0] == 80.0);
  REQUIRE(p.g[1] == 0.0);

  REQUIRE(comfort_floor(6) == 15.0);
  REQUIRE(comfort_floor(7) == 21.0);
  REQUIRE(comfort_floor(17) == 21.0);
  REQUIRE(comfort_floor(18) == 15.0);
  REQUIRE(comfort_floor(0) == 15.0);
}

TEST_CASE("sample-size table reproduces the published column") {
  auto rows = sample_size_table({0.05, 0.05}, {5, 6, 7});
  REQUIRE(rows.size() == 3);
  REQUIRE(rows[0].n_ssmpc == 434);
  REQUIRE(rows[1].n_ssmpc == 577);
  REQUIRE(rows[2].n_ssmpc == 740);
  REQUIRE(rows[0].n_rmpc == 311);
  REQUIRE(rows[1].n_rmpc == 361);
  REQUIRE(rows[2].n_rmpc == 410);
  for (const auto& r : rows) REQUIRE(r.n_calib == 59);

  // Building study at beta = 0.10.
  auto building = sample_size_table({0.05, 0.10}, {5});
  REQUIRE(building[0].n_ssmpc == 400);
  REQUIRE(building[0].n_rmpc == 282);
  REQUIRE(building[0].n_calib == 45);

  TempDir dir("ddsmpc_bench_ss");
  const std::string path = dir.str() + "/table.csv";
  save_sample_size_csv(rows, path);
  auto back = load_sample_size_csv(path);
  REQUIRE(back.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    REQUIRE(back[i].H == rows[i].H);
    REQUIRE(back[i].n_ssmpc == rows[i].n_ssmpc);
    REQUIRE(back[i].n_rmpc == rows[i].n_rmpc);
    REQUIRE(back[i].n_calib == rows[i].n_calib);
  }
}

TEST_CASE("weather ingestion: windows, bias, gap detection") {
  TempDir dir("ddsmpc_bench_weather");
  SyntheticWeatherParams wp;
  WeatherSeries ws = synth_weather(286, wp, 7);
  const std::string path = dir.str() + "/weather.csv";
  save_weather_csv(ws, path);
  ScenarioSet windows = ingest_weather(path, 5);
  REQUIRE(windows.count() == 282);  // 286 hours, H = 5
  auto [train, calib] = split(windows, 237, 45, 3);
  REQUIRE(train.count() == 237);
  REQUIRE(calib.count() == 45);

  // Perfect forecast: all-zero scenarios. Constant bias b: all entries b.
  WeatherSeries exact = ws;
  exact.measured = exact.forecast;
  save_weather_csv(exact, path);
  REQUIRE(ingest_weather(path, 5).data.cwiseAbs().maxCoeff() == 0.0);
  WeatherSeries biased = ws;
  biased.measured = biased.forecast.array() + 1.5;
  save_weather_csv(biased, path);
  ScenarioSet bias_windows = ingest_weather(path, 5);
  REQUIRE((bias_windows.data.array() - 1.5).abs().maxCoeff() < 1e-12);

  // Remove one mid-series hour: the error names the surrounding timestamps.
  WeatherSeries gapped;
  for (Eigen::Index t = 0; t < ws.forecast.size(); ++t) {
    if (t == 100) continue;
    gapped.timestamps.push_back(ws.timestamps[static_cast<size_t>(t)]);
  }
  gapped.forecast = Vector(ws.forecast.size() - 1);
  gapped.measured = Vector(ws.forecast.size() - 1);
  Eigen::Index k = 0;
  for (Eigen::Index t = 0; t < ws.forecast.size(); ++t) {
    if (t == 100) continue;
    gapped.forecast[k] = ws.forecast[t];
    gapped.measured[k] = ws.measured[t];
    ++k;
  }
  save_weather_csv(gapped, path);
  REQUIRE_THROWS_WITH(ingest_weather(path, 5), Catch::Matchers::ContainsSubstring(ws.timestamps[99]) &&
                                                   Catch::Matchers::ContainsSubstring(ws.timestamps[101]));
}

TEST_CASE("2-D example: pinned sample sizes, containment, geometry dump") {
  GuaranteeParams g{0.05, 0.05};
  Example2dResult res = run_example_2d(g, 2024);
  REQUIRE(res.n_calib == 59);
  REQUIRE(res.n_rect == 153);
  REQUIRE(res.train.rows() == 94);
  REQUIRE(res.calib.rows() == 59);
  REQUIRE(empirical_coverage(res.set, res.calib) == 1.0);
  REQUIRE(res.theta_post >= 0.0);
  REQUIRE(res.rect_area > 0.0);
  REQUIRE(res.set_area > 0.0);

  // Labels partition the training set; outliers bounded by nu*N + 1.
  Eigen::Index outliers = 0;
  for (int l : res.labels) {
    REQUIRE(l >= 0);
    REQUIRE(l <= 2);
    if (l == 2) ++outliers;
  }
  REQUIRE(outliers <= static_cast<Eigen::Index>(0.05 * 94) + 1);

  TempDir dir("ddsmpc_bench_2d");
  save_example_2d(res, dir.str());
  REQUIRE(fs::exists(dir.path / "train_points.csv"));
  REQUIRE(fs::exists(dir.path / "f_contour.csv"));
  std::ifstream in(dir.path / "example_2d.json");
  nlohmann::json j;
  in >> j;
  REQUIRE(j.at("n_rect").get<long long>() == 153);
  SvcUncertaintySet back = set_from_json(j.at("set"));
  REQUIRE(back.radius == res.set.radius);
}

TEST_CASE("Monte Carlo guarantee study: desk scale sanity and determinism") {
  BenchmarkConfig config;
  config.name = "monte-carlo";
  config.scale = 0.02;  // 10 runs x 100 evaluations
  config.train_sizes = {100};
  config.seeds = {5};
  MonteCarloResult res = run_monte_carlo_guarantee(config);
  REQUIRE(res.runs == 10);
  REQUIRE(res.eval_count == 100);
  REQUIRE(res.rows.size() == 2);
  REQUIRE(res.rows[0].method == "rmpc");
  REQUIRE(res.rows[0].sample_size == 311);
  REQUIRE(res.rows[1].method == "drmpc");
  REQUIRE(res.rows[1].sample_size == 159);
  for (const auto& r : res.rows) {
    REQUIRE(r.beta_hat >= 0.0);
    REQUIRE(r.beta_hat <= 1.0);
    REQUIRE(r.mean_eps >= 0.0);
    REQUIRE(r.mean_eps <= 1.0);
    REQUIRE(r.var_eps >= 0.0);
  }

  MonteCarloResult rerun = run_monte_carlo_guarantee(config);
  REQUIRE(rerun.rows[1].beta_hat == res.rows[1].beta_hat);
  REQUIRE(rerun.rows[1].mean_eps == res.rows[1].mean_eps);

  TempDir dir("ddsmpc_bench_mc");
  const std::string path = dir.str() + "/mc.csv";
  save_monte_carlo_csv(res, path);
  MonteCarloResult back = load_monte_carlo_csv(path);
  REQUIRE(back.rows.size() == res.rows.size());
  REQUIRE(back.rows[0].beta_hat == res.rows[0].beta_hat);
  REQUIRE(back.rows[1].mean_eps == res.rows[1].mean_eps);
}

TEST_CASE("two-mass-spring benchmark: one seed, three controllers") {
  TempDir dir("ddsmpc_bench_spring");
  BenchmarkConfig config;
  config.name = "two-mass-spring";
  config.horizons = {5};
  config.seeds = {3};
  config.sim_length = 10;
  config.outdir = dir.str();
  BenchmarkResult res = run_benchmark(config);
  REQUIRE(res.cells.size() == 3);
  for (const auto& c : res.cells) {
    INFO(c.controller << ": " << c.error);
    REQUIRE(c.error.empty());
    REQUIRE(c.metrics.violation_rate >= 0.0);
    REQUIRE(c.metrics.violation_rate <= 1.0);
    REQUIRE(c.metrics.fallback_rate >= 0.0);
    REQUIRE(c.metrics.fallback_rate <= 1.0);
    REQUIRE(c.metrics.avg_cost_to_go > 0.0);
    REQUIRE(fs::exists(dir.path / ("two-mass-spring_" + c.controller + "_H5_seed3_trace.csv")));
  }
  REQUIRE(res.cells[0].sample_size == 259);  // 200 train + 59 calibration
  REQUIRE(res.cells[1].sample_size == 434);
  REQUIRE(res.cells[2].sample_size == 311);

  BenchmarkResult back = load_benchmark_csv(dir.str() + "/two-mass-spring_aggregate.csv");
  REQUIRE(back.cells.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    REQUIRE(back.cells[i].controller == res.cells[i].controller);
    REQUIRE(back.cells[i].metrics.avg_cost_to_go == res.cells[i].metrics.avg_cost_to_go);
    REQUIRE(back.cells[i].sample_size == res.cells[i].sample_size);
  }
}

TEST_CASE("benchmark sweep records per-cell failures and continues") {
  BenchmarkConfig config;
  config.name = "two-mass-spring";
  config.horizons = {5};
  config.seeds = {1};
  config.sim_length = 5;
  config.n_train = 10;  // too small for SVC training at nu = 0.05
  config.controllers = {RhcControllerKind::kDrmpc, RhcControllerKind::kRmpc};
  BenchmarkResult res = run_benchmark(config);
  REQUIRE(res.cells.size() == 2);
  REQUIRE_FALSE(res.cells[0].error.empty());   // DRMPC training fails
  // RMPC also needs the trained backup set, so it fails the same way; both
  // cells are recorded rather than aborting the sweep.
  REQUIRE_FALSE(res.cells[1].error.empty());
}

TEST_CASE("building benchmark: two synthetic days, all controllers") {
  BenchmarkConfig config;
  config.name = "building";
  config.guarantee = {0.05, 0.10};
  config.seeds = {4};
  config.sim_length = 48;
  BenchmarkResult res = run_benchmark(config);
  REQUIRE(res.cells.size() == 3);
  for (const auto& c : res.cells) {
    INFO(c.controller << ": " << c.error);
    REQUIRE(c.error.empty());
    REQUIRE(c.sample_size >= 282);
    REQUIRE(c.energy > 0.0);
    REQUIRE(c.metrics.violation_rate <= 0.05);
    REQUIRE(c.metrics.avg_solve_ms < 2000.0);
  }
}

TEST_CASE("benchmark config JSON round trip") {
  BenchmarkConfig config;
  config.name = "building";
  config.guarantee = {0.05, 0.10};
  config.seeds = {9, 10};
  config.horizons = {5, 6};
  config.controllers = {RhcControllerKind::kDrmpc};
  config.scale = 0.25;
  config.weather.mean = 26.0;
  nlohmann::json j = benchmark_config_to_json(config);
  BenchmarkConfig back = benchmark_config_from_json(j);
  REQUIRE(back.name == config.name);
  REQUIRE(back.guarantee.beta == 0.10);
  REQUIRE(back.seeds == config.seeds);
  REQUIRE(back.horizons == config.horizons);
  REQUIRE(back.controllers.size() == 1);
  REQUIRE(back.controllers[0] == RhcControllerKind::kDrmpc);
  REQUIRE(back.scale == 0.25);
  REQUIRE(back.weather.mean == 26.0);
  REQUIRE_THROWS_AS(controller_from_string("nope"), std::invalid_argument);
}

}  // namespace
}  // namespace ddsmpc
