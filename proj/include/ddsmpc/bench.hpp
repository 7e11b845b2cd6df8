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

// Benchmark harness: built-in plants (two-mass-spring, building climate), the
// offline training pipeline, closed-loop comparison studies, the Monte Carlo
// guarantee study, the 2-D set-construction example, and weather ingestion.
// All outputs are plain CSV/JSON.

#ifndef DDSMPC_BENCH_HPP_
#define DDSMPC_BENCH_HPP_

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddsmpc/rhc.hpp"

namespace ddsmpc {

// ---------------------------------------------------------------------------
// Built-in plants.

struct BuiltinPlant {
  std::string name;
  LtiModel model;
  Vector x0;
  Matrix Q, R, Q_f;
  Matrix F;  // per-stage state constraint F x <= f
  Vector f;
  Matrix G;  // hard input constraint G u <= g
  Vector g;
  SaturationKind saturation = SaturationKind::kTanh;
};

/// Two masses coupled by a spring (K=1, m1=0.5, m2=2), discretized at 0.1 s.
/// States: positions then velocities; velocity bounds +-0.38, input +-1.6.
inline BuiltinPlant two_mass_spring() {
  BuiltinPlant p;
  p.name = "two-mass-spring";
  p.model.A = Matrix(4, 4);
  p.model.A << 1, 0, 0.1, 0,
      0, 1, 0, 0.1,
      -2, 0.2, 1, 0,
      0.5, -0.05, 0, 1;
  p.model.B_u = Matrix(4, 1);
  p.model.B_u << 0, 0, 0.2, 0;
  p.model.B_w = Matrix(4, 1);
  p.model.B_w << 1.0, 0.5, 0.3, 0.4;
  p.model.B_v = Matrix(4, 0);
  p.x0 = Vector(4);
  p.x0 << 0.2, 1, -0.1, 0.1;
  p.Q = 5.0 * Matrix::Identity(4, 4);
  p.R = Matrix::Identity(1, 1);
  p.Q_f = Matrix::Identity(4, 4);
  p.F = Matrix::Zero(4, 4);
  p.F(0, 2) = 1.0;
  p.F(1, 2) = -1.0;
  p.F(2, 3) = 1.0;
  p.F(3, 3) = -1.0;
  p.f = Vector::Constant(4, 0.38);
  p.G = Matrix(2, 1);
  p.G << 1.0, -1.0;
  p.g = Vector::Constant(2, 1.6);
  p.saturation = SaturationKind::kTanh;
  return p;
}

/// One-floor campus building (hourly RC model). States: room, wall, roof and
/// floor temperature; input: internal heating (0..80); v = [outdoor-temperature
/// forecast, underground temperature].
inline BuiltinPlant building_energy() {
  BuiltinPlant p;
  p.name = "building";
  p.model.A = Matrix(4, 4);
  p.model.A << 0.0167, 0.0048, 0.1245, 0.1409,
      0.0005, 0.0002, 0.0039, 0.0044,
      0.0253, 0.0073, 0.3321, 0.0617,
      0.0244, 0.0070, 0.0526, 0.3456;
  p.model.B_u = Matrix(4, 1);
  p.model.B_u << 0.0986, 0.0029, 0.0288, 0.0275;
  p.model.B_w = Matrix(4, 1);
  p.model.B_w << 0.2536, 0.0070, 0.4450, 0.4477;
  p.model.B_v = Matrix(4, 2);
  p.model.B_v << 0.2536, 0.4596,
      0.0070, 0.9840,
      0.4450, 0.1287,
      0.4477, 0.1225;
  p.x0 = Vector(4);
  p.x0 << 21.0, 18.0, 16.0, 14.0;
  p.Q = Matrix::Zero(4, 4);
  p.R = Matrix::Identity(1, 1);
  p.Q_f = Matrix::Zero(4, 4);
  p.F = Matrix::Zero(1, 4);
  p.F(0, 0) = -1.0;  // room temperature floor: -x1 <= -floor
  p.f = Vector::Constant(1, -15.0);
  p.G = Matrix(2, 1);
  p.G << 1.0, -1.0;
  p.g = Vector(2);
  p.g << 80.0, 0.0;
  p.saturation = SaturationKind::kTanh;
  return p;
}

/// Comfort floor in degrees Celsius by hour of day: 21 during on-peak occupied
/// hours (7am to 6pm), 15 otherwise.
inline double comfort_floor(int hour) { return (hour >= 7 && hour < 18) ? 21.0 : 15.0; }

inline ControlSpec make_spec(const BuiltinPlant& plant, Eigen::Index H, const LiftedScenarioSet& pool,
                             const GuaranteeParams& g, bool enforce_sample_sizes = true) {
  ControlSpec spec;
  spec.model = plant.model;
  spec.H = H;
  spec.Q = plant.Q;
  spec.R = plant.R;
  spec.Q_f = plant.Q_f;
  spec.state_constraints.assign(static_cast<size_t>(H), {plant.F, plant.f});
  spec.G = plant.G;
  spec.g = plant.g;
  spec.saturation = plant.saturation;
  spec.moments = estimate_moments(pool);
  spec.phi_mean = pool.phi_mean;
  spec.guarantee = g;
  spec.enforce_sample_sizes = enforce_sample_sizes;
  return spec;
}

// ---------------------------------------------------------------------------
// Offline training pipeline.

struct TrainedArtifacts {
  LiftedScenarioSet pool;  // lifted training pool (moments, SSMPC constraints)
  SvcUncertaintySet set;   // calibrated
  CalibrationResult calibration;
  double theta_pre = 0.0;
};

/// Train the lifted SVC set and calibrate its radius on an independent set.
inline TrainedArtifacts train_calibrated_set(const ScenarioSet& train_raw, const ScenarioSet& calib_raw,
                                             SaturationKind kind, const GuaranteeParams& g, double nu) {
  TrainedArtifacts art;
  art.pool = lift(train_raw, kind);
  WgikKernel kernel = fit_wgik(art.pool.data);
  SvcModel model = train_svc(art.pool.data, nu, kernel);
  art.set = make_uncertainty_set(model, kernel, art.pool.phi_mean);
  art.theta_pre = model.theta;
  LiftedScenarioSet calib = lift(calib_raw, kind, art.pool.phi_mean);
  art.calibration = calibrate(art.set, calib.data, g);
  art.set.radius = art.calibration.theta_tilde;
  return art;
}

// ---------------------------------------------------------------------------
// Configuration.

struct SyntheticWeatherParams {
  double mean = 28.0;              // degrees Celsius
  double daily_amplitude = 3.0;    // day/night swing
  double seasonal_amplitude = 2.0; // slow drift over the run
  double error_rho = 0.6;          // AR(1) forecast-error correlation
  double error_std = 0.6;          // stationary forecast-error std
  double underground = 8.9;        // annual average outdoor temperature
};

struct BenchmarkConfig {
  std::string name = "two-mass-spring";  // two-mass-spring | building | example-2d | monte-carlo | sample-size
  std::vector<RhcControllerKind> controllers = {RhcControllerKind::kDrmpc, RhcControllerKind::kSsmpc,
                                                RhcControllerKind::kRmpc};
  GuaranteeParams guarantee{0.05, 0.05};
  std::vector<Eigen::Index> horizons = {5};
  std::vector<std::uint64_t> seeds = {1};
  Ar1Params disturbance;  // rho 0.6, stationary std 0.05
  std::string outdir;     // empty: keep results in memory only
  double scale = 1.0;     // scales Monte Carlo run counts for desk-scale runs
  bool full_scale = false;
  Eigen::Index sim_length = 100;
  double nu = 0.05;
  Eigen::Index n_train = 200;  // DRMPC training size for the closed-loop studies
  std::vector<Eigen::Index> train_sizes = {100, 150, 200, 250};  // Monte Carlo study
  SyntheticWeatherParams weather;

  // Forwarded to every cell's closed-loop run; reports each solved stage
  // policy with the spec it was solved under (fallback steps excluded).
  // Not part of the JSON schema.
  std::function<void(const ControlSpec&, Eigen::Index, const PolicyResult&)> on_solved;

  void validate() const {
    if (seeds.empty()) throw std::invalid_argument("BenchmarkConfig: seeds must be nonempty");
    if (horizons.empty()) throw std::invalid_argument("BenchmarkConfig: horizons must be nonempty");
    if (!(scale > 0.0)) throw std::invalid_argument("BenchmarkConfig: scale must be positive");
    if (sim_length < 1) throw std::invalid_argument("BenchmarkConfig: sim_length must be >= 1");
    guarantee.validate();
  }
};

inline RhcControllerKind controller_from_string(const std::string& s) {
  if (s == "drmpc") return RhcControllerKind::kDrmpc;
  if (s == "ssmpc") return RhcControllerKind::kSsmpc;
  if (s == "rmpc") return RhcControllerKind::kRmpc;
  throw std::invalid_argument("unknown controller \"" + s + "\" (expected drmpc, ssmpc or rmpc)");
}

inline nlohmann::json benchmark_config_to_json(const BenchmarkConfig& c) {
  nlohmann::json j;
  j["name"] = c.name;
  std::vector<std::string> ctrl;
  for (auto k : c.controllers) ctrl.emplace_back(to_string(k));
  j["controllers"] = ctrl;
  j["guarantee"] = {{"epsilon", c.guarantee.epsilon}, {"beta", c.guarantee.beta}};
  j["horizons"] = std::vector<long long>(c.horizons.begin(), c.horizons.end());
  j["seeds"] = c.seeds;
  j["disturbance"] = {{"rho", c.disturbance.rho}, {"stationary_std", c.disturbance.stationary_std}};
  j["outdir"] = c.outdir;
  j["scale"] = c.scale;
  j["full_scale"] = c.full_scale;
  j["sim_length"] = c.sim_length;
  j["nu"] = c.nu;
  j["n_train"] = c.n_train;
  j["train_sizes"] = std::vector<long long>(c.train_sizes.begin(), c.train_sizes.end());
  j["weather"] = {{"mean", c.weather.mean},
                  {"daily_amplitude", c.weather.daily_amplitude},
                  {"seasonal_amplitude", c.weather.seasonal_amplitude},
                  {"error_rho", c.weather.error_rho},
                  {"error_std", c.weather.error_std},
                  {"underground", c.weather.underground}};
  return j;
}

inline BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j) {
  BenchmarkConfig c;
  if (j.contains("name")) c.name = j.at("name").get<std::string>();
  if (j.contains("controllers")) {
    c.controllers.clear();
    for (const auto& s : j.at("controllers")) c.controllers.push_back(controller_from_string(s.get<std::string>()));
  }
  if (j.contains("guarantee")) {
    c.guarantee.epsilon = j.at("guarantee").at("epsilon").get<double>();
    c.guarantee.beta = j.at("guarantee").at("beta").get<double>();
  }
  if (j.contains("horizons")) {
    c.horizons.clear();
    for (const auto& h : j.at("horizons")) c.horizons.push_back(h.get<Eigen::Index>());
  }
  if (j.contains("seeds")) {
    c.seeds.clear();
    for (const auto& s : j.at("seeds")) c.seeds.push_back(s.get<std::uint64_t>());
  }
  if (j.contains("disturbance")) {
    c.disturbance.rho = j.at("disturbance").at("rho").get<double>();
    c.disturbance.stationary_std = j.at("disturbance").at("stationary_std").get<double>();
  }
  if (j.contains("outdir")) c.outdir = j.at("outdir").get<std::string>();
  if (j.contains("scale")) c.scale = j.at("scale").get<double>();
  if (j.contains("full_scale")) c.full_scale = j.at("full_scale").get<bool>();
  if (j.contains("sim_length")) c.sim_length = j.at("sim_length").get<Eigen::Index>();
  if (j.contains("nu")) c.nu = j.at("nu").get<double>();
  if (j.contains("n_train")) c.n_train = j.at("n_train").get<Eigen::Index>();
  if (j.contains("train_sizes")) {
    c.train_sizes.clear();
    for (const auto& n : j.at("train_sizes")) c.train_sizes.push_back(n.get<Eigen::Index>());
  }
  if (j.contains("weather")) {
    const auto& w = j.at("weather");
    if (w.contains("mean")) c.weather.mean = w.at("mean").get<double>();
    if (w.contains("daily_amplitude")) c.weather.daily_amplitude = w.at("daily_amplitude").get<double>();
    if (w.contains("seasonal_amplitude")) c.weather.seasonal_amplitude = w.at("seasonal_amplitude").get<double>();
    if (w.contains("error_rho")) c.weather.error_rho = w.at("error_rho").get<double>();
    if (w.contains("error_std")) c.weather.error_std = w.at("error_std").get<double>();
    if (w.contains("underground")) c.weather.underground = w.at("underground").get<double>();
  }
  c.validate();
  return c;
}

inline BenchmarkConfig load_benchmark_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_benchmark_config: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return benchmark_config_from_json(j);
}

namespace detail {

// Deterministic sub-seed derivation (splitmix64 step over a combined key).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sample-size table.

struct SampleSizeRow {
  Eigen::Index H = 0;
  long long d_ssmpc = 0, n_ssmpc = 0;
  long long d_rmpc = 0, n_rmpc = 0;
  long long n_calib = 0;
};

inline std::vector<SampleSizeRow> sample_size_table(const GuaranteeParams& g, const std::vector<Eigen::Index>& horizons,
                                                    Eigen::Index n_u = 1, Eigen::Index n_w = 1) {
  std::vector<SampleSizeRow> rows;
  for (Eigen::Index H : horizons) {
    SampleSizeRow r;
    r.H = H;
    r.d_ssmpc = df_decision_count(H, n_u, n_w);
    r.n_ssmpc = scenario_sample_size(r.d_ssmpc, g);
    r.d_rmpc = rect_decision_count(H, n_w);
    r.n_rmpc = scenario_sample_size(r.d_rmpc, g);
    r.n_calib = calibration_sample_size(g);
    rows.push_back(r);
  }
  return rows;
}

inline void save_sample_size_csv(const std::vector<SampleSizeRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_sample_size_csv: cannot open " + path);
  out << "H,d_ssmpc,n_ssmpc,d_rmpc,n_rmpc,n_calib\n";
  for (const auto& r : rows) {
    out << r.H << ',' << r.d_ssmpc << ',' << r.n_ssmpc << ',' << r.d_rmpc << ',' << r.n_rmpc << ',' << r.n_calib
        << '\n';
  }
}

inline std::vector<SampleSizeRow> load_sample_size_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_sample_size_csv: cannot open " + path);
  std::string line;
  std::getline(in, line);
  std::vector<SampleSizeRow> rows;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ss(line);
    SampleSizeRow r;
    char c;
    ss >> r.H >> c >> r.d_ssmpc >> c >> r.n_ssmpc >> c >> r.d_rmpc >> c >> r.n_rmpc >> c >> r.n_calib;
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Synthetic weather and ingestion.

inline WeatherSeries synth_weather(Eigen::Index hours, const SyntheticWeatherParams& p, std::uint64_t seed) {
  if (hours < 1) throw std::invalid_argument("synth_weather: hours must be >= 1");
  WeatherSeries ws;
  ws.forecast = Vector(hours);
  ws.measured = Vector(hours);
  ws.timestamps.reserve(static_cast<size_t>(hours));
  Ar1Params err;
  err.rho = p.error_rho;
  err.stationary_std = p.error_std;
  err.seed = seed;
  ScenarioSet noise = generate_ar1(err, 1, hours, 1);
  static const int kMonthDays[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  int month = 0, day = 1, hour = 0;
  const double two_pi = 2.0 * 3.14159265358979323846;
  for (Eigen::Index t = 0; t < hours; ++t) {
    const double daily = p.daily_amplitude * std::sin(two_pi * (static_cast<double>(t % 24) - 9.0) / 24.0);
    const double seasonal = p.seasonal_amplitude * std::sin(two_pi * static_cast<double>(t) / (24.0 * 30.0));
    ws.forecast[t] = p.mean + daily + seasonal;
    ws.measured[t] = ws.forecast[t] + noise.data(0, t);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "2017-%02d-%02d %02d:00", month + 1, day, hour);
    ws.timestamps.emplace_back(buf);
    if (++hour == 24) {
      hour = 0;
      if (++day > kMonthDays[month]) {
        day = 1;
        month = (month + 1) % 12;
      }
    }
  }
  return ws;
}

inline void save_weather_csv(const WeatherSeries& ws, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_weather_csv: cannot open " + path);
  out.precision(17);
  out << "timestamp,forecast,measured\n";
  for (Eigen::Index t = 0; t < ws.forecast.size(); ++t) {
    out << ws.timestamps[static_cast<size_t>(t)] << ',' << ws.forecast[t] << ',' << ws.measured[t] << '\n';
  }
}

namespace detail {

// Absolute hour index of a "YYYY-MM-DD HH:MM" timestamp (civil-day counting).
inline long long timestamp_hour(const std::string& ts, int lineno) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0;
  const int got = std::sscanf(ts.c_str(), "%d-%d-%d %d:%d", &y, &mo, &d, &h, &mi);
  if (got != 5 || mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23) {
    throw std::runtime_error("ingest_weather: bad timestamp \"" + ts + "\" at row " + std::to_string(lineno));
  }
  // Days since epoch for the civil date (Howard Hinnant's algorithm).
  const int yy = y - (mo <= 2 ? 1 : 0);
  const long long era = (yy >= 0 ? yy : yy - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(yy - era * 400);
  const unsigned doy = static_cast<unsigned>((153 * (mo + (mo > 2 ? -3 : 9)) + 2) / 5 + d - 1);
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  const long long days = era * 146097 + static_cast<long long>(doe) - 719468;
  return days * 24 + h;
}

}  // namespace detail

/// Load a weather CSV, verify the hourly grid has no gaps, and window the
/// prediction errors (measured minus forecast) into H-length scenarios.
inline ScenarioSet ingest_weather(const std::string& path, Eigen::Index H) {
  WeatherSeries ws = load_weather_csv(path);
  std::vector<std::string> gaps;
  long long prev = 0;
  for (size_t i = 0; i < ws.timestamps.size(); ++i) {
    const long long cur = detail::timestamp_hour(ws.timestamps[i], static_cast<int>(i) + 2);
    if (i > 0 && cur != prev + 1) {
      gaps.push_back(ws.timestamps[i - 1] + " -> " + ws.timestamps[i]);
    }
    prev = cur;
  }
  if (!gaps.empty()) {
    std::string msg = "ingest_weather: " + std::to_string(gaps.size()) + " gap(s) in the hourly grid:";
    for (const auto& gp : gaps) msg += " [" + gp + "]";
    throw std::runtime_error(msg);
  }
  return error_windows(ws, H);
}

// ---------------------------------------------------------------------------
// Closed-loop benchmark.

struct BenchmarkCell {
  std::string controller;
  Eigen::Index H = 0;
  std::uint64_t seed = 0;
  long long sample_size = 0;
  Metrics metrics;
  double energy = 0.0;  // sum of applied inputs (building study)
  std::string error;    // empty on success
};

struct BenchmarkResult {
  std::vector<BenchmarkCell> cells;
};

inline void save_benchmark_csv(const std::string& name, const BenchmarkResult& res, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_benchmark_csv: cannot open " + path);
  out.precision(17);
  out << "name,controller,H,seed,sample_size,avg_cost_to_go,avg_solve_ms,violation_rate,fallback_rate,energy,error\n";
  for (const auto& c : res.cells) {
    std::string err = c.error;
    for (auto& ch : err) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    out << name << ',' << c.controller << ',' << c.H << ',' << c.seed << ',' << c.sample_size << ','
        << c.metrics.avg_cost_to_go << ',' << c.metrics.avg_solve_ms << ',' << c.metrics.violation_rate << ','
        << c.metrics.fallback_rate << ',' << c.energy << ',' << err << '\n';
  }
}

inline BenchmarkResult load_benchmark_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_benchmark_csv: cannot open " + path);
  std::string line;
  std::getline(in, line);
  BenchmarkResult res;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 10) throw std::runtime_error("load_benchmark_csv: short row at line " + std::to_string(lineno));
    BenchmarkCell c;
    c.controller = cells[1];
    c.H = std::stoll(cells[2]);
    c.seed = std::stoull(cells[3]);
    c.sample_size = std::stoll(cells[4]);
    c.metrics.avg_cost_to_go = std::stod(cells[5]);
    c.metrics.avg_solve_ms = std::stod(cells[6]);
    c.metrics.violation_rate = std::stod(cells[7]);
    c.metrics.fallback_rate = std::stod(cells[8]);
    c.energy = std::stod(cells[9]);
    if (cells.size() > 10) c.error = cells[10];
    res.cells.push_back(c);
  }
  return res;
}

namespace detail {

inline void write_cell_artifacts(const BenchmarkConfig& config, const BenchmarkCell& cell, const RhcTrace& trace) {
  if (config.outdir.empty()) return;
  std::filesystem::create_directories(config.outdir);
  const std::string stem = config.outdir + "/" + config.name + "_" + cell.controller + "_H" +
                           std::to_string(cell.H) + "_seed" + std::to_string(cell.seed);
  save_trace_csv(trace, stem + "_trace.csv");
  nlohmann::json j = metrics_to_json(cell.metrics);
  j["sample_size"] = cell.sample_size;
  j["energy"] = cell.energy;
  std::ofstream out(stem + "_metrics.json");
  out << j.dump(2) << '\n';
}

// One two-mass-spring cell: draw method-specific samples, train, run RHC.
inline BenchmarkCell run_spring_cell(const BenchmarkConfig& config, RhcControllerKind kind, Eigen::Index H,
                                     std::uint64_t seed) {
  BenchmarkCell cell;
  cell.controller = to_string(kind);
  cell.H = H;
  cell.seed = seed;
  const BuiltinPlant plant = two_mass_spring();
  const GuaranteeParams g = config.guarantee;
  Ar1Params p = config.disturbance;

  const long long n_calib = calibration_sample_size(g);
  p.seed = mix_seed(seed, 11 + static_cast<std::uint64_t>(H));
  ScenarioSet train_raw = generate_ar1(p, config.n_train, H, 1);
  p.seed = mix_seed(seed, 12 + static_cast<std::uint64_t>(H));
  ScenarioSet calib_raw = generate_ar1(p, n_calib, H, 1);
  TrainedArtifacts art = train_calibrated_set(train_raw, calib_raw, plant.saturation, g, config.nu);

  RhcConfig rc;
  rc.kind = kind;
  rc.sim_length = config.sim_length;
  rc.x0 = plant.x0;
  rc.seed = mix_seed(seed, 999);  // shared across controllers at a matched seed
  rc.ar1 = config.disturbance;
  rc.set = art.set;

  switch (kind) {
    case RhcControllerKind::kDrmpc: {
      rc.spec = make_spec(plant, H, art.pool, g);
      cell.sample_size = config.n_train + n_calib;
      break;
    }
    case RhcControllerKind::kSsmpc: {
      const long long n_ss = scenario_sample_size(df_decision_count(H, 1, 1), g);
      p.seed = mix_seed(seed, 13 + static_cast<std::uint64_t>(H));
      ScenarioSet ss_raw = generate_ar1(p, n_ss, H, 1);
      rc.scenarios = lift(ss_raw, plant.saturation);
      rc.spec = make_spec(plant, H, rc.scenarios, g);
      cell.sample_size = n_ss;
      break;
    }
    case RhcControllerKind::kRmpc: {
      const long long n_rect = scenario_sample_size(rect_decision_count(H, 1), g);
      p.seed = mix_seed(seed, 14 + static_cast<std::uint64_t>(H));
      ScenarioSet rect_raw = generate_ar1(p, n_rect, H, 1);
      rc.rect = rect_fit(rect_raw, g);
      LiftedScenarioSet rect_pool = lift(rect_raw, plant.saturation);
      rc.spec = make_spec(plant, H, rect_pool, g);
      cell.sample_size = n_rect;
      break;
    }
  }

  if (config.on_solved) {
    rc.on_solved = [&rc, &config](Eigen::Index t, const PolicyResult& r) { config.on_solved(rc.spec, t, r); };
  }
  RhcTrace trace = run_rhc(rc);
  cell.metrics = compute_metrics(trace, rc.spec);
  cell.energy = trace.inputs.sum();
  write_cell_artifacts(config, cell, trace);
  return cell;
}

// One building cell: synthetic weather supplies both the training windows and
// the realized prediction errors of the simulated month.
inline BenchmarkCell run_building_cell(const BenchmarkConfig& config, RhcControllerKind kind, std::uint64_t seed) {
  BenchmarkCell cell;
  cell.controller = to_string(kind);
  cell.H = 5;
  cell.seed = seed;
  const Eigen::Index H = 5;
  const BuiltinPlant plant = building_energy();
  const GuaranteeParams g = config.guarantee;

  const long long n_calib = calibration_sample_size(g);
  const long long n_ss = scenario_sample_size(df_decision_count(H, 1, 1), g);
  const long long n_rect = scenario_sample_size(rect_decision_count(H, 1), g);
  const Eigen::Index hist_hours = std::max<long long>(n_ss, n_rect + n_calib) + H + 32;
  WeatherSeries history = synth_weather(hist_hours, config.weather, detail::mix_seed(seed, 101));
  Vector err = history.measured - history.forecast;
  auto windows = [&](Eigen::Index begin, Eigen::Index count) {
    ScenarioSet set;
    set.H = H;
    set.n_w = 1;
    set.data = Matrix(count, H);
    for (Eigen::Index i = 0; i < count; ++i) set.data.row(i) = err.segment(begin + i, H).transpose();
    return set;
  };

  const Eigen::Index T = config.sim_length;
  WeatherSeries sim = synth_weather(T + H, config.weather, detail::mix_seed(seed, 202));
  RhcConfig rc;
  rc.kind = kind;
  rc.sim_length = T;
  rc.x0 = plant.x0;
  rc.disturbances = Matrix(T, 1);
  for (Eigen::Index t = 0; t < T; ++t) rc.disturbances(t, 0) = sim.measured[t] - sim.forecast[t];
  rc.v_series = Matrix(T + H - 1, 2);
  for (Eigen::Index t = 0; t < T + H - 1; ++t) {
    rc.v_series(t, 0) = sim.forecast[t];
    rc.v_series(t, 1) = config.weather.underground;
  }
  rc.f_schedule.resize(static_cast<size_t>(T + H));
  for (Eigen::Index t = 0; t < T + H; ++t) {
    rc.f_schedule[static_cast<size_t>(t)] = Vector::Constant(1, -comfort_floor(static_cast<int>(t % 24)));
  }

  const long long n_train = n_rect - n_calib;  // same total budget as the rectangle method
  TrainedArtifacts art =
      train_calibrated_set(windows(0, n_train), windows(n_train, n_calib), plant.saturation, g, config.nu);
  rc.set = art.set;

  switch (kind) {
    case RhcControllerKind::kDrmpc: {
      rc.spec = make_spec(plant, H, art.pool, g);
      cell.sample_size = n_rect;
      break;
    }
    case RhcControllerKind::kSsmpc: {
      rc.scenarios = lift(windows(0, n_ss), plant.saturation);
      rc.spec = make_spec(plant, H, rc.scenarios, g);
      cell.sample_size = n_ss;
      break;
    }
    case RhcControllerKind::kRmpc: {
      ScenarioSet rect_raw = windows(0, n_rect);
      rc.rect = rect_fit(rect_raw, g);
      LiftedScenarioSet rect_pool = lift(rect_raw, plant.saturation);
      rc.spec = make_spec(plant, H, rect_pool, g);
      cell.sample_size = n_rect;
      break;
    }
  }

  if (config.on_solved) {
    rc.on_solved = [&rc, &config](Eigen::Index t, const PolicyResult& r) { config.on_solved(rc.spec, t, r); };
  }
  RhcTrace trace = run_rhc(rc);
  cell.metrics = compute_metrics(trace, rc.spec);
  cell.energy = trace.inputs.sum();
  write_cell_artifacts(config, cell, trace);
  return cell;
}

}  // namespace detail

/// Run the requested closed-loop study; per-cell failures are recorded in the
/// cell's error field and the sweep continues.
inline BenchmarkResult run_benchmark(const BenchmarkConfig& config) {
  config.validate();
  BenchmarkResult res;
  if (config.name == "sample-size") {
    auto rows = sample_size_table(config.guarantee, config.horizons);
    if (!config.outdir.empty()) {
      std::filesystem::create_directories(config.outdir);
      save_sample_size_csv(rows, config.outdir + "/sample_size.csv");
    }
    return res;
  }
  for (Eigen::Index H : config.horizons) {
    for (std::uint64_t seed : config.seeds) {
      for (RhcControllerKind kind : config.controllers) {
        BenchmarkCell cell;
        try {
          if (config.name == "two-mass-spring") {
            cell = detail::run_spring_cell(config, kind, H, seed);
          } else if (config.name == "building") {
            cell = detail::run_building_cell(config, kind, seed);
          } else {
            throw std::invalid_argument("run_benchmark: unknown benchmark \"" + config.name + "\"");
          }
        } catch (const std::exception& e) {
          cell.controller = to_string(kind);
          cell.H = H;
          cell.seed = seed;
          cell.error = e.what();
        }
        res.cells.push_back(cell);
      }
    }
  }
  if (!config.outdir.empty()) {
    std::filesystem::create_directories(config.outdir);
    save_benchmark_csv(config.name, res, config.outdir + "/" + config.name + "_aggregate.csv");
  }
  return res;
}

// ---------------------------------------------------------------------------
// Monte Carlo guarantee study.

struct MonteCarloRow {
  std::string method;
  Eigen::Index n_train = 0;  // 0 for the rectangle method
  Eigen::Index n_calib = 0;
  long long sample_size = 0;
  double beta_hat = 0.0;
  double mean_eps = 0.0;
  double var_eps = 0.0;
};

struct MonteCarloResult {
  std::vector<MonteCarloRow> rows;
  Eigen::Index runs = 0;
  Eigen::Index eval_count = 0;
};

inline void save_monte_carlo_csv(const MonteCarloResult& res, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_monte_carlo_csv: cannot open " + path);
  out.precision(17);
  out << "method,n_train,n_calib,sample_size,beta_hat,mean_eps,var_eps\n";
  for (const auto& r : res.rows) {
    out << r.method << ',' << r.n_train << ',' << r.n_calib << ',' << r.sample_size << ',' << r.beta_hat << ','
        << r.mean_eps << ',' << r.var_eps << '\n';
  }
}

inline MonteCarloResult load_monte_carlo_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_monte_carlo_csv: cannot open " + path);
  std::string line;
  std::getline(in, line);
  MonteCarloResult res;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw std::runtime_error("load_monte_carlo_csv: malformed row in " + path);
    MonteCarloRow r;
    r.method = cells[0];
    r.n_train = std::stoll(cells[1]);
    r.n_calib = std::stoll(cells[2]);
    r.sample_size = std::stoll(cells[3]);
    r.beta_hat = std::stod(cells[4]);
    r.mean_eps = std::stod(cells[5]);
    r.var_eps = std::stod(cells[6]);
    res.rows.push_back(r);
  }
  return res;
}

/// For each method (rectangle at its scenario count; calibrated SVC sets at
/// several training sizes) repeat: build the set from fresh samples, estimate
/// the violation probability on fresh evaluation data, and report the fraction
/// of repetitions exceeding epsilon.
inline MonteCarloResult run_monte_carlo_guarantee(const BenchmarkConfig& config) {
  config.validate();
  const Eigen::Index H = config.horizons.front();
  const GuaranteeParams g = config.guarantee;
  MonteCarloResult res;
  res.runs = config.full_scale ? 5000 : std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(500 * config.scale)));
  res.eval_count =
      config.full_scale ? 20000 : std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(5000 * config.scale)));

  Ar1Params p = config.disturbance;
  const std::uint64_t base = config.seeds.front();

  {
    MonteCarloRow row;
    row.method = "rmpc";
    row.sample_size = scenario_sample_size(rect_decision_count(H, 1), g);
    double sum = 0.0, sum2 = 0.0;
    Eigen::Index exceed = 0;
    for (Eigen::Index r = 0; r < res.runs; ++r) {
      p.seed = detail::mix_seed(base, 3000 + static_cast<std::uint64_t>(r));
      RectSet rect = rect_fit(generate_ar1(p, row.sample_size, H, 1));
      p.seed = detail::mix_seed(base, 4000 + static_cast<std::uint64_t>(r));
      ScenarioSet fresh = generate_ar1(p, res.eval_count, H, 1);
      Eigen::Index outside = 0;
      for (Eigen::Index i = 0; i < fresh.count(); ++i) {
        for (Eigen::Index k = 0; k < fresh.data.cols(); ++k) {
          if (fresh.data(i, k) < rect.gamma_min[k] || fresh.data(i, k) > rect.gamma_max[k]) {
            ++outside;
            break;
          }
        }
      }
      const double eps = static_cast<double>(outside) / static_cast<double>(fresh.count());
      sum += eps;
      sum2 += eps * eps;
      if (eps > g.epsilon) ++exceed;
    }
    row.beta_hat = static_cast<double>(exceed) / static_cast<double>(res.runs);
    row.mean_eps = sum / static_cast<double>(res.runs);
    row.var_eps = sum2 / static_cast<double>(res.runs) - row.mean_eps * row.mean_eps;
    res.rows.push_back(row);
  }

  const long long n_calib = calibration_sample_size(g);
  for (Eigen::Index n_train : config.train_sizes) {
    MonteCarloRow row;
    row.method = "drmpc";
    row.n_train = n_train;
    row.n_calib = n_calib;
    row.sample_size = n_train + n_calib;
    double sum = 0.0, sum2 = 0.0;
    Eigen::Index exceed = 0;
    for (Eigen::Index r = 0; r < res.runs; ++r) {
      const std::uint64_t key = static_cast<std::uint64_t>(n_train) * 100000ull + static_cast<std::uint64_t>(r);
      p.seed = detail::mix_seed(base, 5000 + key);
      ScenarioSet train_raw = generate_ar1(p, n_train, H, 1);
      p.seed = detail::mix_seed(base, 6000 + key);
      ScenarioSet calib_raw = generate_ar1(p, n_calib, H, 1);
      TrainedArtifacts art = train_calibrated_set(train_raw, calib_raw, SaturationKind::kTanh, g, config.nu);
      p.seed = detail::mix_seed(base, 7000 + key);
      ScenarioSet fresh = generate_ar1(p, res.eval_count, H, 1);
      LiftedScenarioSet fresh_lifted = lift(fresh, SaturationKind::kTanh, art.pool.phi_mean);
      const double eps = 1.0 - empirical_coverage(art.set, fresh_lifted.data);
      sum += eps;
      sum2 += eps * eps;
      if (eps > g.epsilon) ++exceed;
    }
    row.beta_hat = static_cast<double>(exceed) / static_cast<double>(res.runs);
    row.mean_eps = sum / static_cast<double>(res.runs);
    row.var_eps = sum2 / static_cast<double>(res.runs) - row.mean_eps * row.mean_eps;
    res.rows.push_back(row);
  }

  if (!config.outdir.empty()) {
    std::filesystem::create_directories(config.outdir);
    save_monte_carlo_csv(res, config.outdir + "/monte_carlo.csv");
  }
  return res;
}

// ---------------------------------------------------------------------------
// 2-D set-construction example.

struct Example2dResult {
  Matrix train;             // N_train x 2
  std::vector<int> labels;  // 0 interior, 1 boundary SV, 2 outlier
  Matrix calib;             // n_calib x 2
  SvcUncertaintySet set;    // calibrated
  double theta_pre = 0.0;
  double theta_post = 0.0;
  long long n_calib = 0;
  long long n_rect = 0;
  RectSet rect;
  Matrix contour;  // grid rows [w1, w2, f]
  double set_area = 0.0;
  double rect_area = 0.0;
  double area_ratio = 0.0;  // rectangle / calibrated polytope
};

inline Example2dResult run_example_2d(const GuaranteeParams& g, std::uint64_t seed, double nu = 0.05,
                                      Eigen::Index n_train = 94) {
  Example2dResult res;
  res.n_calib = calibration_sample_size(g);
  res.n_rect = scenario_sample_size(rect_decision_count(1, 2), g);

  // Correlated bivariate Gaussian samples.
  detail::GaussianStream gauss(seed);
  auto draw = [&](Eigen::Index n) {
    Matrix pts(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double z1 = gauss.next(), z2 = gauss.next();
      pts(i, 0) = z1;
      pts(i, 1) = 0.7 * z1 + 0.5 * z2;
    }
    return pts;
  };
  res.train = draw(n_train);
  res.calib = draw(res.n_calib);
  Matrix rect_samples = draw(res.n_rect);

  WgikKernel kernel = fit_wgik(res.train);
  SvcModel model = train_svc(res.train, nu, kernel);
  res.set = make_uncertainty_set(model, kernel);
  res.theta_pre = model.theta;
  CalibrationResult cal = calibrate(res.set, res.calib, g);
  res.set.radius = res.theta_post = cal.theta_tilde;

  res.labels.assign(static_cast<size_t>(n_train), 0);
  for (Eigen::Index i : model.bsv_indices) res.labels[static_cast<size_t>(i)] = 1;
  for (Eigen::Index i : model.outlier_indices) res.labels[static_cast<size_t>(i)] = 2;

  res.rect = rect_fit({rect_samples, 1, 2});
  res.rect_area = (res.rect.gamma_max - res.rect.gamma_min).prod();

  // Bounding box covering both sets, with margin.
  Vector lo = res.train.colwise().minCoeff().transpose().cwiseMin(res.rect.gamma_min);
  Vector hi = res.train.colwise().maxCoeff().transpose().cwiseMax(res.rect.gamma_max);
  Vector margin = 0.25 * (hi - lo);
  lo -= margin;
  hi += margin;

  const Eigen::Index grid = 60;
  res.contour = Matrix(grid * grid, 3);
  for (Eigen::Index a = 0; a < grid; ++a) {
    for (Eigen::Index b = 0; b < grid; ++b) {
      Vector w(2);
      w[0] = lo[0] + (hi[0] - lo[0]) * static_cast<double>(a) / static_cast<double>(grid - 1);
      w[1] = lo[1] + (hi[1] - lo[1]) * static_cast<double>(b) / static_cast<double>(grid - 1);
      res.contour.row(a * grid + b) << w[0], w[1], eval_f(res.set, w);
    }
  }

  // Polytope area by deterministic Monte Carlo over the bounding box.
  const Eigen::Index n_mc = 200000;
  std::mt19937_64 rng(detail::mix_seed(seed, 42));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::Index inside = 0;
  for (Eigen::Index i = 0; i < n_mc; ++i) {
    Vector w(2);
    w[0] = lo[0] + (hi[0] - lo[0]) * unif(rng);
    w[1] = lo[1] + (hi[1] - lo[1]) * unif(rng);
    if (eval_f(res.set, w) <= res.set.radius) ++inside;
  }
  const double box_area = (hi - lo).prod();
  res.set_area = box_area * static_cast<double>(inside) / static_cast<double>(n_mc);
  res.area_ratio = res.set_area > 0.0 ? res.rect_area / res.set_area : kInf;
  return res;
}

inline void save_example_2d(const Example2dResult& res, const std::string& outdir) {
  std::filesystem::create_directories(outdir);
  auto write_points = [&](const Matrix& pts, const std::vector<int>* labels, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_example_2d: cannot open " + path);
    out.precision(17);
    out << (labels ? "w1,w2,label\n" : "w1,w2\n");
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      out << pts(i, 0) << ',' << pts(i, 1);
      if (labels) out << ',' << (*labels)[static_cast<size_t>(i)];
      out << '\n';
    }
  };
  write_points(res.train, &res.labels, outdir + "/train_points.csv");
  write_points(res.calib, nullptr, outdir + "/calib_points.csv");
  {
    std::ofstream out(outdir + "/f_contour.csv");
    out.precision(17);
    out << "w1,w2,f\n";
    for (Eigen::Index i = 0; i < res.contour.rows(); ++i) {
      out << res.contour(i, 0) << ',' << res.contour(i, 1) << ',' << res.contour(i, 2) << '\n';
    }
  }
  nlohmann::json j;
  j["theta_pre"] = res.theta_pre;
  j["theta_post"] = res.theta_post;
  j["n_calib"] = res.n_calib;
  j["n_rect"] = res.n_rect;
  j["rect_min"] = std::vector<double>(res.rect.gamma_min.begin(), res.rect.gamma_min.end());
  j["rect_max"] = std::vector<double>(res.rect.gamma_max.begin(), res.rect.gamma_max.end());
  j["set_area"] = res.set_area;
  j["rect_area"] = res.rect_area;
  j["area_ratio"] = res.area_ratio;
  j["set"] = set_to_json(res.set);
  std::ofstream out(outdir + "/example_2d.json");
  out << j.dump(2) << '\n';
}

}  // namespace ddsmpc

#endif  // DDSMPC_BENCH_HPP_
