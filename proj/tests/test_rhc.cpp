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

#include <cstdio>

#include "ddsmpc/rhc.hpp"

namespace ddsmpc {
namespace {

LtiModel scalar_model(double a = 0.9, double bu = 1.0, double bw = 0.5) {
  LtiModel m;
  m.A = Matrix::Constant(1, 1, a);
  m.B_u = Matrix::Constant(1, 1, bu);
  m.B_w = Matrix::Constant(1, 1, bw);
  m.B_v = Matrix(1, 0);
  return m;
}

LiftedScenarioSet centered_pool(Eigen::Index N, Eigen::Index H, std::uint64_t seed) {
  Ar1Params p;
  p.seed = seed;
  p.stationary_std = 0.3;
  ScenarioSet raw = generate_ar1(p, N, H, 1);
  raw.data.rowwise() -= raw.data.colwise().mean();
  return lift(raw, SaturationKind::kTanh);
}

ControlSpec scalar_spec(Eigen::Index H, const LiftedScenarioSet& pool, double xmax, double umax,
                        double bw = 0.5) {
  ControlSpec spec;
  spec.model = scalar_model(0.9, 1.0, bw);
  spec.H = H;
  spec.Q = Matrix::Constant(1, 1, 1.0);
  spec.R = Matrix::Constant(1, 1, 0.1);
  spec.Q_f = Matrix::Constant(1, 1, 1.0);
  Matrix F(2, 1);
  F << 1.0, -1.0;
  Vector f = Vector::Constant(2, xmax);
  spec.state_constraints.assign(static_cast<size_t>(H), {F, f});
  spec.G = F;
  spec.g = Vector::Constant(2, umax);
  spec.saturation = pool.kind;
  spec.moments = estimate_moments(pool);
  spec.phi_mean = pool.phi_mean;
  spec.enforce_sample_sizes = false;
  return spec;
}

SvcUncertaintySet lifted_set(const LiftedScenarioSet& pool, double nu, double radius_scale) {
  WgikKernel k = fit_wgik(pool.data);
  SvcModel model = train_svc(pool.data, nu, k);
  SvcUncertaintySet set = make_uncertainty_set(model, k, pool.phi_mean);
  set.radius = model.theta * radius_scale;
  return set;
}

RhcConfig base_config(Eigen::Index H, Eigen::Index T, double xmax, double umax, std::uint64_t seed,
                      double bw = 0.5) {
  LiftedScenarioSet pool = centered_pool(400, H, 21);
  RhcConfig config;
  config.kind = RhcControllerKind::kDrmpc;
  config.spec = scalar_spec(H, pool, xmax, umax, bw);
  config.sim_length = T;
  config.x0 = Vector::Constant(1, 0.8);
  config.ar1.stationary_std = 0.3;
  config.seed = seed;
  config.set = lifted_set(pool, 0.1, 1.2);
  config.scenarios = pool;
  config.rect = rect_fit({pool.data.rightCols(H), H, 1});
  return config;
}

// Minimal trace for metric and boundedness tests; only states, inputs and the
// flag vectors are inspected by those routines.
RhcTrace synthetic_trace(const Vector& norms) {
  const Eigen::Index T = norms.size() - 1;
  RhcTrace trace;
  trace.states = norms;
  trace.inputs = Matrix::Zero(T, 1);
  trace.w = Matrix::Zero(T, 1);
  trace.stage_cost = Vector::Zero(T);
  trace.solve_ms = Vector::Zero(T);
  trace.decrease = Vector::Zero(T);
  trace.fallback.assign(static_cast<size_t>(T), 0);
  trace.violation.assign(static_cast<size_t>(T), 0);
  return trace;
}

TEST_CASE("no disturbance channel: deterministic rollout, no fallback") {
  // B_w = 0 makes the run independent of the realized noise; the applied
  // input must match the unconstrained deterministic optimum at each state.
  RhcConfig config = base_config(3, 25, 1e6, 1e6, 5, /*bw=*/0.0);
  RhcTrace trace = run_rhc(config);
  Metrics m = compute_metrics(trace, config.spec);
  REQUIRE(m.fallback_rate == 0.0);
  REQUIRE(m.violation_rate == 0.0);

  PredictionMatrices pm = build_prediction_matrices(config.spec.model, config.spec.H);
  Matrix Qbar = Matrix::Zero(3, 3);
  Qbar(0, 0) = 1.0;
  Qbar(1, 1) = 1.0;
  Qbar(2, 2) = 1.0;  // Q_f = Q here
  Matrix Rbar = 0.1 * Matrix::Identity(3, 3);
  Matrix W = Rbar + pm.Bu_bold.transpose() * Qbar * pm.Bu_bold;
  for (Eigen::Index t = 0; t < trace.steps(); ++t) {
    const Vector x = trace.states.row(t).transpose();
    Vector h = W.ldlt().solve(-pm.Bu_bold.transpose() * Qbar * pm.Abold * x);
    REQUIRE(std::abs(trace.inputs(t, 0) - h[0]) < 1e-6);
  }

  // A different seed changes the logged noise but not the closed loop.
  RhcConfig other = config;
  other.seed = 77;
  RhcTrace alt = run_rhc(other);
  REQUIRE((alt.states - trace.states).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((alt.inputs - trace.inputs).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("identical seed and config give identical traces") {
  RhcConfig config = base_config(3, 40, 3.0, 4.0, 123);
  RhcTrace a = run_rhc(config);
  RhcTrace b = run_rhc(config);
  REQUIRE((a.states - b.states).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((a.inputs - b.inputs).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((a.w - b.w).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.fallback == b.fallback);
  REQUIRE(a.violation == b.violation);
}

TEST_CASE("trace invariants: replay, input feasibility, CSV round trip") {
  RhcConfig config = base_config(3, 60, 2.5, 4.0, 9);
  RhcTrace trace = run_rhc(config);

  // states row t+1 is exactly the simulated step; replay is bit-exact.
  Matrix again = replay_states(config.spec.model, trace.states.row(0).transpose(), trace.inputs, trace.w);
  REQUIRE((again - trace.states).cwiseAbs().maxCoeff() == 0.0);

  // Hard input constraints hold at every step.
  for (Eigen::Index t = 0; t < trace.steps(); ++t) {
    REQUIRE((config.spec.G * trace.inputs.row(t).transpose() - config.spec.g).maxCoeff() <= 1e-8);
  }

  const std::string path = "test_rhc_trace.csv";
  save_trace_csv(trace, path);
  RhcTrace loaded = load_trace_csv(path, 1, 1, 1);
  REQUIRE((loaded.states - trace.states).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((loaded.inputs - trace.inputs).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((loaded.w - trace.w).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(loaded.fallback == trace.fallback);
  Matrix replayed = replay_states(config.spec.model, loaded.states.row(0).transpose(), loaded.inputs, loaded.w);
  REQUIRE((replayed - trace.states).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("infeasible start triggers the backup and stays input-feasible") {
  RhcConfig config = base_config(3, 15, 0.9, 0.5, 31);
  config.x0 = Vector::Constant(1, 2.0);  // cannot reach the state box in one step
  RhcTrace trace = run_rhc(config);
  REQUIRE(trace.fallback[0] == 1);
  REQUIRE(std::isfinite(trace.decrease[0]));
  Metrics m = compute_metrics(trace, config.spec);
  REQUIRE(m.fallback_rate > 0.0);
  for (Eigen::Index t = 0; t < trace.steps(); ++t) {
    REQUIRE((config.spec.G * trace.inputs.row(t).transpose() - config.spec.g).maxCoeff() <= 1e-8);
  }
  // The backup drives the state toward the box; late steps should be feasible.
  REQUIRE(trace.fallback[static_cast<size_t>(trace.steps() - 1)] == 0);
}

TEST_CASE("scenario and rectangle controllers run closed loop") {
  for (auto kind : {RhcControllerKind::kSsmpc, RhcControllerKind::kRmpc}) {
    RhcConfig config = base_config(3, 12, 3.0, 4.0, 17);
    config.kind = kind;
    RhcTrace trace = run_rhc(config);
    REQUIRE(trace.steps() == 12);
    Matrix again = replay_states(config.spec.model, trace.states.row(0).transpose(), trace.inputs, trace.w);
    REQUIRE((again - trace.states).cwiseAbs().maxCoeff() == 0.0);
    for (Eigen::Index t = 0; t < trace.steps(); ++t) {
      REQUIRE((config.spec.G * trace.inputs.row(t).transpose() - config.spec.g).maxCoeff() <= 1e-8);
    }
  }
}

TEST_CASE("wall-clock bound schedule drives the violation accounting") {
  RhcConfig config = base_config(3, 12, 2.5, 4.0, 41);
  const Eigen::Index horizon = config.sim_length + config.spec.H;
  config.f_schedule.resize(static_cast<size_t>(horizon));
  for (Eigen::Index t = 0; t < horizon; ++t) {
    // One tight dip mid-run exercises both the fallback and the violation path.
    const double level = t == 6 ? 0.15 : 2.5;
    config.f_schedule[static_cast<size_t>(t)] = Vector::Constant(2, level);
  }
  RhcTrace trace = run_rhc(config);
  const Matrix& F = config.spec.state_constraints[0].F;
  for (Eigen::Index t = 0; t < trace.steps(); ++t) {
    const Vector x = trace.states.row(t + 1).transpose();
    const bool manual = (F * x - config.f_schedule[static_cast<size_t>(t + 1)]).maxCoeff() > 1e-9;
    REQUIRE(static_cast<bool>(trace.violation[static_cast<size_t>(t)]) == manual);
  }
}

TEST_CASE("exhausted disturbance stream names the missing step") {
  RhcConfig config = base_config(3, 10, 3.0, 4.0, 2);
  config.disturbances = Matrix::Zero(5, 1);
  REQUIRE_THROWS_WITH(run_rhc(config), Catch::Matchers::ContainsSubstring("step 5"));
}

TEST_CASE("metrics: hand-computed two-step trace") {
  Vector norms(3);
  norms << 1.0, 2.0, 3.0;
  RhcTrace trace = synthetic_trace(norms);
  trace.inputs << 0.5, -1.0;
  trace.solve_ms << 1.0, 3.0;
  trace.fallback = {1, 0};
  trace.violation = {0, 1};
  ControlSpec spec;
  spec.Q = Matrix::Constant(1, 1, 2.0);
  spec.R = Matrix::Constant(1, 1, 1.0);
  Metrics m = compute_metrics(trace, spec);
  // (2*1 + 0.25 + 2*4 + 1) / 2
  REQUIRE(m.avg_cost_to_go == Catch::Approx(5.625).epsilon(1e-14));
  REQUIRE(m.avg_solve_ms == Catch::Approx(2.0));
  REQUIRE(m.fallback_rate == 0.5);
  REQUIRE(m.violation_rate == 0.5);
  REQUIRE(m.mean_square_state == Catch::Approx(14.0 / 3.0).epsilon(1e-14));

  nlohmann::json j = metrics_to_json(m);
  Metrics back = metrics_from_json(j);
  REQUIRE(back.avg_cost_to_go == m.avg_cost_to_go);
  REQUIRE(back.violation_rate == m.violation_rate);
}

TEST_CASE("metrics: zero trajectory and quarter violation rate") {
  RhcTrace zero = synthetic_trace(Vector::Zero(5));
  ControlSpec spec;
  spec.Q = Matrix::Identity(1, 1);
  spec.R = Matrix::Identity(1, 1);
  REQUIRE(compute_metrics(zero, spec).avg_cost_to_go == 0.0);

  RhcTrace flags = synthetic_trace(Vector::Zero(5));
  flags.violation = {0, 0, 1, 0};
  REQUIRE(compute_metrics(flags, spec).violation_rate == 0.25);
}

TEST_CASE("mean-square bound check: decay, growth, precondition") {
  Vector decay(101);
  for (Eigen::Index t = 0; t <= 100; ++t) decay[t] = std::pow(0.9, static_cast<double>(t));
  REQUIRE(mean_square_bound_check(synthetic_trace(decay), 10).bounded);

  Vector flat = Vector::Ones(101);
  REQUIRE(mean_square_bound_check(synthetic_trace(flat), 10).bounded);

  Vector linear(201);
  for (Eigen::Index t = 0; t <= 200; ++t) linear[t] = static_cast<double>(t);
  BoundednessReport rep = mean_square_bound_check(synthetic_trace(linear), 20);
  REQUIRE_FALSE(rep.bounded);
  REQUIRE(rep.max_windowed_mean > rep.reference_median);

  REQUIRE_THROWS_AS(mean_square_bound_check(synthetic_trace(Vector::Zero(51)), 10), std::invalid_argument);
}

TEST_CASE("deterministic exogenous input enters the loop and the replay") {
  RhcConfig config = base_config(3, 12, 3.0, 4.0, 13);
  config.spec.model.B_v = Matrix::Constant(1, 1, 0.7);
  const Eigen::Index rows = config.sim_length + config.spec.H - 1;
  config.v_series = Matrix(rows, 1);
  for (Eigen::Index t = 0; t < rows; ++t) config.v_series(t, 0) = 0.1 * std::sin(0.3 * static_cast<double>(t));
  RhcTrace trace = run_rhc(config);
  Matrix again = replay_states(config.spec.model, trace.states.row(0).transpose(), trace.inputs, trace.w,
                               config.v_series);
  REQUIRE((again - trace.states).cwiseAbs().maxCoeff() == 0.0);
  // Dropping the exogenous input changes the replayed path.
  Matrix without = replay_states(scalar_model(), trace.states.row(0).transpose(), trace.inputs, trace.w);
  REQUIRE((without - trace.states).cwiseAbs().maxCoeff() > 1e-6);
}

}  // namespace
}  // namespace ddsmpc
