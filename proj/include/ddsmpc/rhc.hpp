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

// Receding-horizon closed-loop simulation: at every step solve the selected
// controller at the measured state, apply the first input (or the softened
// backup's first input when the main problem is infeasible), then advance the
// plant with the realized disturbance. Also metric computation, a heuristic
// mean-square boundedness check, and trace serialization.

#ifndef DDSMPC_RHC_HPP_
#define DDSMPC_RHC_HPP_

#include <algorithm>
#include <chrono>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddsmpc/controllers.hpp"

namespace ddsmpc {

enum class RhcControllerKind { kDrmpc, kSsmpc, kRmpc };

inline const char* to_string(RhcControllerKind k) {
  switch (k) {
    case RhcControllerKind::kDrmpc: return "drmpc";
    case RhcControllerKind::kSsmpc: return "ssmpc";
    default: return "rmpc";
  }
}

/// Closed-loop run description. Controller artifacts (uncertainty set,
/// scenario pool, rectangle) are built offline and passed in; the calibrated
/// set is always required because the backup problem is built from it.
struct RhcConfig {
  RhcControllerKind kind = RhcControllerKind::kDrmpc;
  ControlSpec spec;
  Eigen::Index sim_length = 0;  // number of closed-loop steps T
  Vector x0;

  // Realized disturbances, one row per step. Empty: draw an AR(1) stream of
  // length T from `ar1` with `seed`.
  Matrix disturbances;
  Ar1Params ar1;
  std::uint64_t seed = 0;

  // Deterministic exogenous inputs per wall-clock step (needs at least
  // T + H - 1 rows so every horizon has a full preview); empty when n_v = 0.
  Matrix v_series;

  // Optional wall-clock schedule for the state-constraint right-hand side,
  // indexed by absolute time (needs at least T + H entries). Empty: the
  // per-stage bounds in `spec` are used unchanged at every step.
  std::vector<Vector> f_schedule;

  SolverSettings solver;

  SvcUncertaintySet set;  // DRMPC and the backup problem
  DdroEncoding encoding = DdroEncoding::kCondensed;
  LiftedScenarioSet scenarios;  // SSMPC
  RectSet rect;                 // RMPC
  double backup_penalty = 0.0;  // <= 0: builder default

  // Observer invoked with (step, result) for every optimal stage solve, before
  // the first input is applied; fallback steps are not reported.
  std::function<void(Eigen::Index, const PolicyResult&)> on_solved;
};

struct RhcTrace {
  Matrix states;  // (T+1) x n_x; row t+1 = simulate_step(row t, inputs row t, w row t, v_t)
  Matrix inputs;  // T x n_u
  Matrix w;       // T x n_w realized disturbances
  Vector stage_cost;  // x_t' Q x_t + u_t' R u_t
  Vector solve_ms;    // wall time per step, milliseconds
  Vector decrease;    // ||A x_t + B_u u_t|| - ||x_t|| on fallback steps, 0 otherwise
  std::vector<char> fallback;
  std::vector<char> violation;

  Eigen::Index steps() const { return inputs.rows(); }
};

struct Metrics {
  double avg_cost_to_go = 0.0;
  double avg_solve_ms = 0.0;
  double violation_rate = 0.0;
  double fallback_rate = 0.0;
  double mean_square_state = 0.0;
};

inline RhcTrace run_rhc(const RhcConfig& config) {
  config.spec.validate();
  if (config.sim_length < 1) throw std::invalid_argument("run_rhc: sim_length must be >= 1");
  const Eigen::Index T = config.sim_length;
  const Eigen::Index H = config.spec.H;
  const LtiModel& model = config.spec.model;
  const Eigen::Index nx = model.n_x(), nu = model.n_u(), nw = model.n_w(), nv = model.n_v();
  if (config.x0.size() != nx) throw std::invalid_argument("run_rhc: x0 dimension mismatch");

  Matrix w = config.disturbances;
  if (w.size() == 0) {
    Ar1Params p = config.ar1;
    p.seed = config.seed;
    // One AR(1) path spanning the whole run keeps temporal correlation across
    // steps, matching how the per-horizon training windows were produced.
    ScenarioSet stream = generate_ar1(p, 1, T, nw);
    w = Matrix(T, nw);
    for (Eigen::Index t = 0; t < T; ++t) w.row(t) = stream.data.row(0).segment(t * nw, nw);
  }
  if (w.cols() != nw) throw std::invalid_argument("run_rhc: disturbance column count mismatch");
  if (w.rows() < T) {
    throw std::runtime_error("run_rhc: disturbance stream exhausted at step " + std::to_string(w.rows()) +
                             " (need " + std::to_string(T) + " steps)");
  }

  if (nv > 0 && config.v_series.rows() < T + H - 1) {
    throw std::invalid_argument("run_rhc: v_series needs at least " + std::to_string(T + H - 1) + " rows");
  }
  if (nv > 0 && config.v_series.cols() != nv) throw std::invalid_argument("run_rhc: v_series column count mismatch");
  const bool scheduled = !config.f_schedule.empty();
  if (scheduled && static_cast<Eigen::Index>(config.f_schedule.size()) < T + H) {
    throw std::invalid_argument("run_rhc: f_schedule needs at least " + std::to_string(T + H) + " entries");
  }

  auto vbar_at = [&](Eigen::Index t) {
    if (nv == 0) return Vector();
    Vector vbar(H * nv);
    for (Eigen::Index k = 0; k < H; ++k) vbar.segment(k * nv, nv) = config.v_series.row(t + k).transpose();
    return vbar;
  };
  auto schedule_at = [&](Eigen::Index t) {
    std::vector<Vector> fo(static_cast<size_t>(H));
    // Stage k of the problem solved at time t constrains x_{t+k+1}.
    for (Eigen::Index k = 0; k < H; ++k) fo[static_cast<size_t>(k)] = config.f_schedule[static_cast<size_t>(t + k + 1)];
    return fo;
  };

  // Applied inputs must satisfy G u <= g strictly even when the ADMM solve
  // stops at its tolerance; project the first input back onto the polytope
  // when it carries a residual violation.
  auto project_input = [&](Vector u) {
    if (config.spec.G.rows() == 0) return u;
    if ((config.spec.G * u - config.spec.g).maxCoeff() <= 1e-10) return u;
    QuadraticProgram proj;
    proj.P = Matrix::Identity(nu, nu);
    proj.q = -u;
    proj.A = config.spec.G;
    proj.lower = Vector::Constant(config.spec.g.size(), -kInf);
    proj.upper = config.spec.g;
    SolverSettings tight;
    tight.abs_tol = 1e-12;
    tight.rel_tol = 1e-12;
    QpSolution sol = solve_qp(proj, tight);
    return Vector(sol.z);
  };

  const Vector vbar0 = vbar_at(0);
  BuiltProblem main_bp;
  switch (config.kind) {
    case RhcControllerKind::kDrmpc:
      main_bp = build_ddro(config.spec, config.x0, config.set, vbar0, config.encoding);
      break;
    case RhcControllerKind::kSsmpc:
      main_bp = build_ssmpc(config.spec, config.x0, config.scenarios, vbar0);
      break;
    case RhcControllerKind::kRmpc:
      main_bp = build_rect(config.spec, config.x0, config.rect, vbar0);
      break;
  }
  BuiltProblem backup_bp = config.backup_penalty > 0.0
                               ? build_backup(config.spec, config.x0, config.set, vbar0, config.backup_penalty)
                               : build_backup(config.spec, config.x0, config.set, vbar0);

  SolverSettings solver_settings = config.solver;
  solver_settings.warm_start = true;  // consecutive problems differ only in q and bounds
  // A practical certificate tolerance: at the offline default every genuinely
  // infeasible stage problem burns the full iteration budget before the
  // engine can fall back.
  solver_settings.infeas_tol = std::max(solver_settings.infeas_tol, 1e-5);
  PolicySolver main_solver(main_bp, solver_settings);
  // The softened problem sits at a degenerate vertex where the splitting
  // iteration has a long tail; the applied first input settles orders of
  // magnitude earlier, so the fallback path runs on a capped budget and
  // accepts the iterate.
  SolverSettings backup_settings = solver_settings;
  backup_settings.max_iterations = std::min(backup_settings.max_iterations, 2000);
  PolicySolver backup_solver(backup_bp, backup_settings);

  RhcTrace trace;
  trace.states = Matrix(T + 1, nx);
  trace.inputs = Matrix(T, nu);
  trace.w = w.topRows(T);
  trace.stage_cost = Vector::Zero(T);
  trace.solve_ms = Vector::Zero(T);
  trace.decrease = Vector::Zero(T);
  trace.fallback.assign(static_cast<size_t>(T), 0);
  trace.violation.assign(static_cast<size_t>(T), 0);
  trace.states.row(0) = config.x0.transpose();

  Vector x = config.x0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const Vector vbar = vbar_at(t);
    const auto start = std::chrono::steady_clock::now();
    std::vector<Vector> fo;
    if (scheduled) fo = schedule_at(t);
    refresh(main_bp, config.spec, x, vbar, scheduled ? &fo : nullptr);
    PolicyResult res = main_solver.solve(main_bp);
    Vector u;
    if (res.status == SolveStatus::kOptimal) {
      if (config.on_solved) config.on_solved(t, res);
      u = res.decision.h.head(nu);
    } else {
      trace.fallback[static_cast<size_t>(t)] = 1;
      refresh(backup_bp, config.spec, x, vbar, scheduled ? &fo : nullptr);
      PolicyResult back = backup_solver.solve(backup_bp);
      u = back.decision.h.head(nu);
    }
    u = project_input(u);
    if (trace.fallback[static_cast<size_t>(t)]) {
      trace.decrease[t] = (model.A * x + model.B_u * u).norm() - x.norm();
    }
    const auto stop = std::chrono::steady_clock::now();
    trace.solve_ms[t] = std::chrono::duration<double, std::milli>(stop - start).count();

    trace.inputs.row(t) = u.transpose();
    trace.stage_cost[t] = x.dot(config.spec.Q * x) + u.dot(config.spec.R * u);
    const Vector v = nv > 0 ? Vector(config.v_series.row(t).transpose()) : Vector();
    x = simulate_step(model, x, u, trace.w.row(t).transpose(), v);
    trace.states.row(t + 1) = x.transpose();

    if (!config.spec.state_constraints.empty()) {
      const Matrix& F = config.spec.state_constraints[0].F;
      const Vector& f = scheduled ? config.f_schedule[static_cast<size_t>(t + 1)] : config.spec.state_constraints[0].f;
      if (F.rows() > 0 && ((F * x - f).maxCoeff() > 1e-9)) trace.violation[static_cast<size_t>(t)] = 1;
    }
  }
  return trace;
}

inline Metrics compute_metrics(const RhcTrace& trace, const ControlSpec& spec) {
  const Eigen::Index T = trace.steps();
  if (T < 1) throw std::invalid_argument("compute_metrics: empty trace");
  if (trace.states.rows() != T + 1) throw std::invalid_argument("compute_metrics: states/inputs length mismatch");
  Metrics m;
  for (Eigen::Index t = 0; t < T; ++t) {
    const Vector x = trace.states.row(t).transpose();
    const Vector u = trace.inputs.row(t).transpose();
    m.avg_cost_to_go += x.dot(spec.Q * x) + u.dot(spec.R * u);
    m.violation_rate += trace.violation[static_cast<size_t>(t)] ? 1.0 : 0.0;
    m.fallback_rate += trace.fallback[static_cast<size_t>(t)] ? 1.0 : 0.0;
    m.avg_solve_ms += trace.solve_ms[t];
  }
  m.avg_cost_to_go /= static_cast<double>(T);
  m.violation_rate /= static_cast<double>(T);
  m.fallback_rate /= static_cast<double>(T);
  m.avg_solve_ms /= static_cast<double>(T);
  for (Eigen::Index t = 0; t <= T; ++t) m.mean_square_state += trace.states.row(t).squaredNorm();
  m.mean_square_state /= static_cast<double>(T + 1);
  return m;
}

struct BoundednessReport {
  double max_windowed_mean = 0.0;
  double reference_median = 0.0;
  bool bounded = true;
};

/// Heuristic divergence detector on the windowed mean of ||x_t||^2. The run is
/// flagged unbounded when any window in the second half of the run exceeds ten
/// times the median window of the first half; comparing late against early
/// keeps decaying transients (large early, small late) on the bounded side
/// while linear or faster growth trips the factor-ten threshold.
inline BoundednessReport mean_square_bound_check(const RhcTrace& trace, Eigen::Index window) {
  const Eigen::Index T = trace.steps();
  if (window < 1) throw std::invalid_argument("mean_square_bound_check: window must be >= 1");
  if (T < 10 * window) throw std::invalid_argument("mean_square_bound_check: need at least 10 windows of data");
  Vector sq(T + 1);
  for (Eigen::Index t = 0; t <= T; ++t) sq[t] = trace.states.row(t).squaredNorm();
  const Eigen::Index n_win = T + 2 - window;  // sliding windows over the T+1 states
  Vector means(n_win);
  double running = sq.head(window).sum();
  means[0] = running / static_cast<double>(window);
  for (Eigen::Index s = 1; s < n_win; ++s) {
    running += sq[s + window - 1] - sq[s - 1];
    means[s] = running / static_cast<double>(window);
  }
  const Eigen::Index half = (T + 1) / 2;
  std::vector<double> early;
  for (Eigen::Index s = 0; s + window <= half; ++s) early.push_back(means[s]);
  if (early.empty()) early.push_back(means[0]);
  std::nth_element(early.begin(), early.begin() + static_cast<long>(early.size() / 2), early.end());
  BoundednessReport rep;
  rep.reference_median = early[early.size() / 2];
  rep.max_windowed_mean = means.maxCoeff();
  double late_max = 0.0;
  for (Eigen::Index s = 0; s < n_win; ++s) {
    if (s >= half) late_max = std::max(late_max, means[s]);
  }
  rep.bounded = late_max <= 10.0 * rep.reference_median;
  return rep;
}

// ---------------------------------------------------------------------------
// Serialization. The CSV carries T+1 rows; the final row holds the terminal
// state with zero input/disturbance columns. precision 17 makes the replay of
// a loaded trace bit-exact.

inline void save_trace_csv(const RhcTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_trace_csv: cannot open " + path);
  out.precision(17);
  const Eigen::Index T = trace.steps();
  out << "t";
  for (Eigen::Index j = 0; j < trace.states.cols(); ++j) out << ",x" << j + 1;
  for (Eigen::Index j = 0; j < trace.inputs.cols(); ++j) out << ",u" << j + 1;
  for (Eigen::Index j = 0; j < trace.w.cols(); ++j) out << ",w" << j + 1;
  out << ",cost,fallback,solve_ms\n";
  for (Eigen::Index t = 0; t <= T; ++t) {
    out << t;
    for (Eigen::Index j = 0; j < trace.states.cols(); ++j) out << ',' << trace.states(t, j);
    const bool last = t == T;
    for (Eigen::Index j = 0; j < trace.inputs.cols(); ++j) out << ',' << (last ? 0.0 : trace.inputs(t, j));
    for (Eigen::Index j = 0; j < trace.w.cols(); ++j) out << ',' << (last ? 0.0 : trace.w(t, j));
    out << ',' << (last ? 0.0 : trace.stage_cost[t]);
    out << ',' << (last ? 0 : static_cast<int>(trace.fallback[static_cast<size_t>(t)]));
    out << ',' << (last ? 0.0 : trace.solve_ms[t]);
    out << '\n';
  }
  if (!out) throw std::runtime_error("save_trace_csv: write failed for " + path);
}

inline RhcTrace load_trace_csv(const std::string& path, Eigen::Index n_x, Eigen::Index n_u, Eigen::Index n_w) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_trace_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_trace_csv: empty file " + path);
  const Eigen::Index n_cols = 1 + n_x + n_u + n_w + 3;
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error("load_trace_csv: bad value at line " + std::to_string(lineno) + " in " + path);
      }
    }
    if (static_cast<Eigen::Index>(row.size()) != n_cols) {
      throw std::runtime_error("load_trace_csv: expected " + std::to_string(n_cols) + " columns at line " +
                               std::to_string(lineno) + ", got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.size() < 2) throw std::runtime_error("load_trace_csv: need at least two data rows in " + path);
  const Eigen::Index T = static_cast<Eigen::Index>(rows.size()) - 1;
  RhcTrace trace;
  trace.states = Matrix(T + 1, n_x);
  trace.inputs = Matrix(T, n_u);
  trace.w = Matrix(T, n_w);
  trace.stage_cost = Vector::Zero(T);
  trace.solve_ms = Vector::Zero(T);
  trace.decrease = Vector::Zero(T);
  trace.fallback.assign(static_cast<size_t>(T), 0);
  trace.violation.assign(static_cast<size_t>(T), 0);
  for (Eigen::Index t = 0; t <= T; ++t) {
    const auto& row = rows[static_cast<size_t>(t)];
    Eigen::Index c = 1;
    for (Eigen::Index j = 0; j < n_x; ++j) trace.states(t, j) = row[static_cast<size_t>(c++)];
    if (t == T) continue;
    for (Eigen::Index j = 0; j < n_u; ++j) trace.inputs(t, j) = row[static_cast<size_t>(c++)];
    for (Eigen::Index j = 0; j < n_w; ++j) trace.w(t, j) = row[static_cast<size_t>(c++)];
    trace.stage_cost[t] = row[static_cast<size_t>(c++)];
    trace.fallback[static_cast<size_t>(t)] = row[static_cast<size_t>(c++)] != 0.0 ? 1 : 0;
    trace.solve_ms[t] = row[static_cast<size_t>(c++)];
  }
  return trace;
}

/// Re-simulate the plant from logged inputs and disturbances; with the same
/// model and exogenous inputs this reproduces the logged states bit-exactly.
inline Matrix replay_states(const LtiModel& model, const Vector& x0, const Matrix& inputs, const Matrix& w,
                            const Matrix& v_series = Matrix()) {
  const Eigen::Index T = inputs.rows();
  if (w.rows() < T) throw std::invalid_argument("replay_states: disturbance rows < input rows");
  Matrix states(T + 1, model.n_x());
  states.row(0) = x0.transpose();
  Vector x = x0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const Vector v = model.n_v() > 0 ? Vector(v_series.row(t).transpose()) : Vector();
    x = simulate_step(model, x, inputs.row(t).transpose(), w.row(t).transpose(), v);
    states.row(t + 1) = x.transpose();
  }
  return states;
}

inline nlohmann::json metrics_to_json(const Metrics& m) {
  return nlohmann::json{{"avg_cost_to_go", m.avg_cost_to_go},
                        {"avg_solve_ms", m.avg_solve_ms},
                        {"violation_rate", m.violation_rate},
                        {"fallback_rate", m.fallback_rate},
                        {"mean_square_state", m.mean_square_state}};
}

inline Metrics metrics_from_json(const nlohmann::json& j) {
  Metrics m;
  m.avg_cost_to_go = j.at("avg_cost_to_go").get<double>();
  m.avg_solve_ms = j.at("avg_solve_ms").get<double>();
  m.violation_rate = j.at("violation_rate").get<double>();
  m.fallback_rate = j.at("fallback_rate").get<double>();
  m.mean_square_state = j.at("mean_square_state").get<double>();
  return m;
}

}  // namespace ddsmpc

#endif  // DDSMPC_RHC_HPP_
