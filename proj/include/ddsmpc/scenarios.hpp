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

// Disturbance scenario generation, CSV ingestion, saturation lifting,
// dataset splitting, and second-moment estimation.

#ifndef DDSMPC_SCENARIOS_HPP_
#define DDSMPC_SCENARIOS_HPP_

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ddsmpc/qp.hpp"

namespace ddsmpc {

// N disturbance trajectories, one per row, each the stacked horizon vector
// [w_0', ..., w_{H-1}'].
struct ScenarioSet {
  Matrix data;
  Eigen::Index H = 0;
  Eigen::Index n_w = 0;

  Eigen::Index count() const { return data.rows(); }

  void validate() const {
    if (data.rows() < 1) throw std::invalid_argument("ScenarioSet: empty");
    if (data.cols() != H * n_w) throw std::invalid_argument("ScenarioSet: column count != H*n_w");
    if (!data.allFinite()) throw std::invalid_argument("ScenarioSet: nonfinite entry");
  }
};

enum class SaturationKind { kTanh, kClamp };

inline double saturate(SaturationKind kind, double r) {
  if (!std::isfinite(r)) throw std::invalid_argument("saturate: nonfinite input");
  return kind == SaturationKind::kTanh ? std::tanh(r) : std::min(1.0, std::max(-1.0, r));
}

// Lifted trajectories [phi(w) - phi_mean; w], with phi applied elementwise.
// The centering mean is computed from training data and reused online.
struct LiftedScenarioSet {
  Matrix data;
  Vector phi_mean;
  SaturationKind kind = SaturationKind::kTanh;
  Eigen::Index H = 0;
  Eigen::Index n_w = 0;

  Eigen::Index count() const { return data.rows(); }
  Eigen::Index raw_dim() const { return H * n_w; }
};

// Sample second moments of the lifted vector, E{phi_c phi_c'}, E{w phi_c'},
// and E{w w'}, all divided by the sample count.
struct MomentEstimates {
  Matrix S_phiphi;
  Matrix S_wphi;
  Matrix S_ww;
  Eigen::Index count = 0;
};

struct Ar1Params {
  double rho = 0.6;
  double stationary_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(std::abs(rho) < 1.0)) throw std::invalid_argument("Ar1Params: |rho| must be < 1");
    if (!(stationary_std > 0.0)) throw std::invalid_argument("Ar1Params: stationary_std must be > 0");
  }
};

namespace detail {

// Box-Muller on the raw 64-bit stream keeps the draw sequence identical
// across standard libraries.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 1e-300) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  double uniform01() { return (static_cast<double>(rng_() >> 11) + 0.5) * 0x1.0p-53; }

  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace detail

// Independent AR(1) trajectories: w_0 stationary, w_t = rho w_{t-1} + e_t
// with innovation variance (1 - rho^2) stationary_std^2, per coordinate.
inline ScenarioSet generate_ar1(const Ar1Params& params, Eigen::Index N, Eigen::Index H, Eigen::Index n_w) {
  params.validate();
  if (N < 1 || H < 1 || n_w < 1) throw std::invalid_argument("generate_ar1: N, H, n_w must be >= 1");
  detail::GaussianStream gauss(params.seed);
  const double innov_std = params.stationary_std * std::sqrt(1.0 - params.rho * params.rho);
  ScenarioSet set;
  set.H = H;
  set.n_w = n_w;
  set.data = Matrix(N, H * n_w);
  for (Eigen::Index i = 0; i < N; ++i) {
    Vector w = Vector::Zero(n_w);
    for (Eigen::Index k = 0; k < n_w; ++k) w[k] = params.stationary_std * gauss.next();
    set.data.block(i, 0, 1, n_w) = w.transpose();
    for (Eigen::Index t = 1; t < H; ++t) {
      for (Eigen::Index k = 0; k < n_w; ++k) w[k] = params.rho * w[k] + innov_std * gauss.next();
      set.data.block(i, t * n_w, 1, n_w) = w.transpose();
    }
  }
  return set;
}

// One scenario per row, comma separated, columns w_0(1..n_w), w_1(1..n_w), ...
// A non-numeric first row is treated as a header and skipped.
inline ScenarioSet load_csv(const std::string& path, Eigen::Index H, Eigen::Index n_w) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string field;
    bool bad = false;
    while (std::getline(ss, field, ',')) {
      try {
        size_t pos = 0;
        vals.push_back(std::stod(field, &pos));
        while (pos < field.size() && std::isspace(static_cast<unsigned char>(field[pos]))) ++pos;
        if (pos != field.size()) bad = true;
      } catch (const std::exception&) {
        bad = true;
      }
      if (bad) break;
    }
    if (bad) {
      if (lineno == 1 && rows.empty()) continue;  // header
      throw std::runtime_error("load_csv: malformed row " + std::to_string(lineno) + " in " + path);
    }
    if (static_cast<Eigen::Index>(vals.size()) != H * n_w) {
      throw std::runtime_error("load_csv: row " + std::to_string(lineno) + " has " + std::to_string(vals.size()) +
                               " fields, expected " + std::to_string(H * n_w));
    }
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw std::runtime_error("load_csv: no data rows in " + path);
  ScenarioSet set;
  set.H = H;
  set.n_w = n_w;
  set.data = Matrix(static_cast<Eigen::Index>(rows.size()), H * n_w);
  for (size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index k = 0; k < H * n_w; ++k) set.data(static_cast<Eigen::Index>(i), k) = rows[i][static_cast<size_t>(k)];
  }
  return set;
}

inline void save_csv(const ScenarioSet& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv: cannot open " + path);
  out.precision(17);
  for (Eigen::Index i = 0; i < set.count(); ++i) {
    for (Eigen::Index k = 0; k < set.data.cols(); ++k) {
      if (k) out << ',';
      out << set.data(i, k);
    }
    out << '\n';
  }
}

// Random partition without replacement into disjoint train/calibration sets.
inline std::pair<ScenarioSet, ScenarioSet> split(const ScenarioSet& set, Eigen::Index n_train, Eigen::Index n_calib,
                                                 std::uint64_t seed) {
  set.validate();
  if (n_train < 1 || n_calib < 1) throw std::invalid_argument("split: both parts must be nonempty");
  if (n_train + n_calib > set.count()) {
    throw std::invalid_argument("split: need " + std::to_string(n_train + n_calib) + " rows, have " +
                                std::to_string(set.count()));
  }
  std::vector<Eigen::Index> idx(static_cast<size_t>(set.count()));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  ScenarioSet train, calib;
  train.H = calib.H = set.H;
  train.n_w = calib.n_w = set.n_w;
  train.data = Matrix(n_train, set.data.cols());
  calib.data = Matrix(n_calib, set.data.cols());
  for (Eigen::Index i = 0; i < n_train; ++i) train.data.row(i) = set.data.row(idx[static_cast<size_t>(i)]);
  for (Eigen::Index i = 0; i < n_calib; ++i) calib.data.row(i) = set.data.row(idx[static_cast<size_t>(n_train + i)]);
  return {std::move(train), std::move(calib)};
}

inline Vector lift_row(const Vector& w, SaturationKind kind, const Vector& phi_mean) {
  const Eigen::Index d = w.size();
  Vector out(2 * d);
  for (Eigen::Index k = 0; k < d; ++k) out[k] = saturate(kind, w[k]) - phi_mean[k];
  out.tail(d) = w;
  return out;
}

// phi_mean absent: compute it from this set. Present: reuse (online data must
// keep the training-time centering).
inline LiftedScenarioSet lift(const ScenarioSet& set, SaturationKind kind, const Vector& phi_mean = Vector()) {
  set.validate();
  const Eigen::Index d = set.H * set.n_w;
  Matrix phi(set.count(), d);
  for (Eigen::Index i = 0; i < set.count(); ++i) {
    for (Eigen::Index k = 0; k < d; ++k) phi(i, k) = saturate(kind, set.data(i, k));
  }
  LiftedScenarioSet lifted;
  lifted.kind = kind;
  lifted.H = set.H;
  lifted.n_w = set.n_w;
  if (phi_mean.size() == 0) {
    lifted.phi_mean = phi.colwise().mean().transpose();
  } else {
    if (phi_mean.size() != d) throw std::invalid_argument("lift: phi_mean dimension mismatch");
    lifted.phi_mean = phi_mean;
  }
  lifted.data = Matrix(set.count(), 2 * d);
  lifted.data.leftCols(d) = phi.rowwise() - lifted.phi_mean.transpose();
  lifted.data.rightCols(d) = set.data;
  return lifted;
}

inline MomentEstimates estimate_moments(const LiftedScenarioSet& lifted) {
  const Eigen::Index N = lifted.count();
  if (N < 2) throw std::invalid_argument("estimate_moments: need at least 2 samples");
  const Eigen::Index d = lifted.raw_dim();
  const Matrix phi = lifted.data.leftCols(d);
  const Matrix w = lifted.data.rightCols(d);
  MomentEstimates m;
  m.count = N;
  m.S_phiphi = phi.transpose() * phi / static_cast<double>(N);
  m.S_wphi = w.transpose() * phi / static_cast<double>(N);
  m.S_ww = w.transpose() * w / static_cast<double>(N);
  m.S_phiphi = 0.5 * (m.S_phiphi + m.S_phiphi.transpose()).eval();
  m.S_ww = 0.5 * (m.S_ww + m.S_ww.transpose()).eval();
  return m;
}

// Hourly weather file with header "timestamp,forecast_c,measured_c".
struct WeatherSeries {
  std::vector<std::string> timestamps;
  Vector forecast;
  Vector measured;
};

inline WeatherSeries load_weather_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_weather_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_weather_csv: empty file " + path);
  WeatherSeries ws;
  std::vector<double> fc, ms;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ss(line);
    std::string ts, f, m;
    if (!std::getline(ss, ts, ',') || !std::getline(ss, f, ',') || !std::getline(ss, m, ',')) {
      throw std::runtime_error("load_weather_csv: malformed row " + std::to_string(lineno));
    }
    try {
      fc.push_back(std::stod(f));
      ms.push_back(std::stod(m));
    } catch (const std::exception&) {
      throw std::runtime_error("load_weather_csv: non-numeric row " + std::to_string(lineno));
    }
    ws.timestamps.push_back(ts);
  }
  if (fc.empty()) throw std::runtime_error("load_weather_csv: no data rows in " + path);
  ws.forecast = Eigen::Map<Vector>(fc.data(), static_cast<Eigen::Index>(fc.size()));
  ws.measured = Eigen::Map<Vector>(ms.data(), static_cast<Eigen::Index>(ms.size()));
  return ws;
}

// Forecast-error scenarios: error_t = measured_t - forecast_t, cut into
// overlapping H-length windows with stride 1.
inline ScenarioSet error_windows(const WeatherSeries& ws, Eigen::Index H) {
  const Eigen::Index T = ws.forecast.size();
  if (T < H) throw std::invalid_argument("error_windows: series shorter than horizon");
  Vector err = ws.measured - ws.forecast;
  ScenarioSet set;
  set.H = H;
  set.n_w = 1;
  set.data = Matrix(T - H + 1, H);
  for (Eigen::Index i = 0; i + H <= T; ++i) set.data.row(i) = err.segment(i, H).transpose();
  return set;
}

}  // namespace ddsmpc

#endif  // DDSMPC_SCENARIOS_HPP_
