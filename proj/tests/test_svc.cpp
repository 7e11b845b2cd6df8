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

#include <random>

#include "ddsmpc/svc.hpp"

namespace ddsmpc {
namespace {

Matrix gaussian_sample(Eigen::Index N, Eigen::Index d, std::uint64_t seed, const Matrix& chol = Matrix()) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  Matrix X(N, d);
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) X(i, k) = gauss(rng);
  }
  if (chol.size() > 0) X = X * chol.transpose();
  return X;
}

TEST_CASE("wgik: sphering of white data is near identity") {
  Matrix X = gaussian_sample(2000, 3, 4);
  WgikKernel k = fit_wgik(X);
  REQUIRE((k.Q - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 0.1);
}

TEST_CASE("wgik: two-point set pins L") {
  Matrix X(2, 2);
  X << 0, 0, 1, 0;
  WgikKernel k = fit_wgik(X);
  Vector e1(2);
  e1 << 1, 0;
  REQUIRE(std::abs(k.L - (1.0 + (k.Q * e1).lpNorm<1>())) < 1e-12);
  // All kernel values positive by the margin built into L.
  REQUIRE(k(X.row(0).transpose(), X.row(1).transpose()) >= 1.0);
}

TEST_CASE("wgik: sphering whitens an anisotropic sample") {
  Matrix chol(2, 2);
  chol << 2.0, 0.0, 0.6, 0.3;
  Matrix X = gaussian_sample(2000, 2, 9, chol);
  WgikKernel k = fit_wgik(X);
  Matrix pop = chol * chol.transpose();
  Matrix white = k.Q * pop * k.Q.transpose();
  REQUIRE((white - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 0.1);
}

TEST_CASE("svc: symmetric 3-point instance has the uniform optimum") {
  Matrix X(3, 2);
  X << 0, 0, 1, 1, 2, 0;  // pairwise L1-equidistant
  WgikKernel k;
  k.Q = Matrix::Identity(2, 2);
  k.L = 10.0;
  SvcModel model = train_svc(X, 0.9, k);
  for (Eigen::Index i = 0; i < 3; ++i) REQUIRE(std::abs(model.alphas[i] - 1.0 / 3.0) < 1e-6);
  REQUIRE(model.bsv_indices.size() == 3);
  REQUIRE(model.outlier_indices.empty());
}

TEST_CASE("svc: dual KKT residuals and the nu-property") {
  const Eigen::Index N = 94;
  const double nu = 0.05;
  Matrix X = gaussian_sample(N, 2, 17);
  WgikKernel k = fit_wgik(X);
  SvcModel model = train_svc(X, nu, k);

  REQUIRE(std::abs(model.alphas.sum() - 1.0) < 1e-8);
  const double cap = 1.0 / (static_cast<double>(N) * nu);
  REQUIRE(model.alphas.minCoeff() >= -1e-12);
  REQUIRE(model.alphas.maxCoeff() <= cap + 1e-6 * cap);
  REQUIRE(model.outlier_indices.size() <= static_cast<size_t>(nu * static_cast<double>(N)) + 1);

  QuadraticProgram qp = svc_dual_qp(X, nu, k);
  KktReport rep = check_kkt(qp, model.alphas);
  REQUIRE(rep.stationarity <= 1e-6);
  REQUIRE(rep.primal_feasibility <= 1e-8);

  // Boundary values agree with theta.
  REQUIRE(model.theta > 0.0);
  REQUIRE(model.theta_spread <= 1e-4 * model.theta);
}

TEST_CASE("svc: training coverage honors the nu lower bound") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Matrix X = gaussian_sample(120, 2, seed);
    WgikKernel k = fit_wgik(X);
    SvcModel model = train_svc(X, 0.1, k);
    SvcUncertaintySet set = make_uncertainty_set(model, k);
    Eigen::Index inside = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      if (eval_f(set, X.row(i).transpose()) <= set.radius + 1e-9) ++inside;
    }
    const double frac = static_cast<double>(inside) / static_cast<double>(X.rows());
    REQUIRE(frac >= 1.0 - 0.1 - 2.0 / static_cast<double>(X.rows()));
  }
}

TEST_CASE("svc: membership is invariant to the kernel offset L") {
  Matrix X = gaussian_sample(60, 2, 23);
  WgikKernel k = fit_wgik(X);
  SvcModel a = train_svc(X, 0.1, k);
  WgikKernel k2 = k;
  k2.L = 2.0 * k.L;
  SvcModel b = train_svc(X, 0.1, k2);
  REQUIRE((a.alphas - b.alphas).cwiseAbs().maxCoeff() < 1e-6);
  REQUIRE(std::abs(a.theta - b.theta) < 1e-6);
}

TEST_CASE("eval_f: definitions and brute-force agreement") {
  Matrix X = gaussian_sample(50, 3, 31);
  WgikKernel k = fit_wgik(X);
  SvcModel model = train_svc(X, 0.1, k);
  SvcUncertaintySet set = make_uncertainty_set(model, k);

  // Boundary point evaluates to the radius.
  Vector wb = model.points.row(model.bsv_indices.front()).transpose();
  REQUIRE(std::abs(eval_f(set, wb) - set.radius) < 1e-6 * std::max(1.0, set.radius));

  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss;
  for (int rep = 0; rep < 10; ++rep) {
    Vector w(3);
    for (Eigen::Index i = 0; i < 3; ++i) w[i] = gauss(rng);
    double brute = 0.0;
    for (Eigen::Index i = 0; i < set.sv_points.rows(); ++i) {
      double term = 0.0;
      Vector diff = w - set.sv_points.row(i).transpose();
      Vector qd = set.Q * diff;
      for (Eigen::Index c = 0; c < 3; ++c) term += std::abs(qd[c]);
      brute += set.alphas[i] * term;
    }
    REQUIRE(std::abs(eval_f(set, w) - brute) < 1e-13 * std::max(1.0, brute));
  }

  // One-SV set: f vanishes at the support vector.
  SvcUncertaintySet one;
  one.Q = Matrix::Identity(2, 2);
  one.alphas = Vector::Ones(1);
  one.sv_points = Matrix::Zero(1, 2);
  one.radius = 0.5;
  REQUIRE(eval_f(one, Vector::Zero(2)) == 0.0);
}

TEST_CASE("eval_f: convexity and level-set monotonicity") {
  Matrix X = gaussian_sample(40, 2, 41);
  WgikKernel k = fit_wgik(X);
  SvcModel model = train_svc(X, 0.15, k);
  SvcUncertaintySet set = make_uncertainty_set(model, k);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> gauss;
  for (int rep = 0; rep < 50; ++rep) {
    Vector a(2), b(2);
    a << gauss(rng), gauss(rng);
    b << gauss(rng), gauss(rng);
    REQUIRE(eval_f(set, 0.5 * (a + b)) <= 0.5 * (eval_f(set, a) + eval_f(set, b)) + 1e-12);
    // Larger radius only adds members.
    const double f = eval_f(set, a);
    if (f <= set.radius) REQUIRE(f <= 1.5 * set.radius);
  }
}

TEST_CASE("polytope membership LP agrees with the level-set test") {
  Matrix X = gaussian_sample(30, 2, 53);
  WgikKernel k = fit_wgik(X);
  SvcModel model = train_svc(X, 0.15, k);
  SvcUncertaintySet set = make_uncertainty_set(model, k);
  PolytopeData poly = polytope_data(set);
  const Eigen::Index ns = poly.sv_points.rows(), d = 2;

  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss;
  int checked = 0;
  for (int rep = 0; rep < 100; ++rep) {
    Vector w(2);
    w << gauss(rng), gauss(rng);
    // min sum_i alpha_i 1's_i subject to s_i >= +-Q(w - w_i), one aux block
    // per support vector; the optimum equals f(w).
    Vector c = Vector::Zero(ns * d);
    for (Eigen::Index i = 0; i < ns; ++i) c.segment(i * d, d).setConstant(-poly.alphas[i]);
    Matrix A = Matrix::Zero(2 * ns * d, ns * d);
    Vector lower(2 * ns * d), upper = Vector::Constant(2 * ns * d, kInf);
    for (Eigen::Index i = 0; i < ns; ++i) {
      Vector qd = poly.Q * (w - poly.sv_points.row(i).transpose());
      for (Eigen::Index cidx = 0; cidx < d; ++cidx) {
        A(2 * (i * d + cidx), i * d + cidx) = 1.0;
        lower[2 * (i * d + cidx)] = qd[cidx];
        A(2 * (i * d + cidx) + 1, i * d + cidx) = 1.0;
        lower[2 * (i * d + cidx) + 1] = -qd[cidx];
      }
    }
    SolverSettings tight;
    tight.abs_tol = 1e-10;
    tight.rel_tol = 1e-10;
    QuadraticProgram lp;
    lp.P = Matrix::Zero(c.size(), c.size());
    lp.q = -c;
    lp.A = A;
    lp.lower = lower;
    lp.upper = upper;
    QpSolution sol = solve_qp(lp, tight);
    REQUIRE(sol.status == SolveStatus::kOptimal);
    const double lp_min = sol.objective;
    const double f = eval_f(set, w);
    REQUIRE(std::abs(lp_min - f) < 1e-6 * std::max(1.0, f));
    ++checked;
  }
  REQUIRE(checked == 100);
}

TEST_CASE("theta: degenerate boundary set rejected") {
  SvcModel model;
  model.alphas = Vector::Ones(1);
  model.points = Matrix::Zero(1, 2);
  model.sv_indices = {0};
  WgikKernel k;
  k.Q = Matrix::Identity(2, 2);
  k.L = 2.0;
  REQUIRE_THROWS_AS(compute_theta(model, k), std::runtime_error);
  REQUIRE_THROWS_AS(train_svc(Matrix::Zero(3, 2), 1.5, k), std::invalid_argument);
  REQUIRE_THROWS_AS(train_svc(Matrix::Zero(3, 2), 0.1, k), std::invalid_argument);  // N*nu <= 1
}

TEST_CASE("json round trip preserves the set") {
  Matrix X = gaussian_sample(40, 2, 61);
  WgikKernel k = fit_wgik(X);
  SvcModel model = train_svc(X, 0.1, k);
  SvcUncertaintySet set = make_uncertainty_set(model, k, Vector::Constant(2, 0.25));
  SvcUncertaintySet back = set_from_json(set_to_json(set));
  REQUIRE((back.alphas - set.alphas).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((back.sv_points - set.sv_points).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((back.Q - set.Q).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(back.radius == set.radius);
  REQUIRE((back.phi_mean - set.phi_mean).cwiseAbs().maxCoeff() == 0.0);
  Vector w(2);
  w << 0.3, -0.4;
  REQUIRE(eval_f(back, w) == eval_f(set, w));
}

}  // namespace
}  // namespace ddsmpc
