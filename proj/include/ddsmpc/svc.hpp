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

// One-class support vector clustering with a weighted L1 intersection
// kernel, producing a polytopic uncertainty set from scenario data.

#ifndef DDSMPC_SVC_HPP_
#define DDSMPC_SVC_HPP_

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddsmpc/qp.hpp"
#include "json.hpp"

namespace ddsmpc {

// Kernel K(w, v) = L - ||Q (w - v)||_1 with Q the sphering matrix of the
// training data and L large enough to keep all kernel values positive.
struct WgikKernel {
  Matrix Q;
  double L = 0.0;

  double operator()(const Vector& w, const Vector& v) const { return L - (Q * (w - v)).lpNorm<1>(); }
};

// Q = (Sigma + lambda I)^(-1/2) by symmetric eigendecomposition with the
// eigenvalues floored at lambda; lifted data can be rank deficient.
inline WgikKernel fit_wgik(const Matrix& train, double lambda_reg = -1.0) {
  const Eigen::Index N = train.rows(), d = train.cols();
  if (N < 2) throw std::invalid_argument("fit_wgik: need at least 2 points");
  Matrix centered = train.rowwise() - train.colwise().mean();
  Matrix sigma = centered.transpose() * centered / static_cast<double>(N);
  if (lambda_reg < 0.0) lambda_reg = 1e-8 * sigma.trace() / static_cast<double>(d);
  if (lambda_reg <= 0.0) lambda_reg = 1e-12;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma + lambda_reg * Matrix::Identity(d, d));
  Vector ev = eig.eigenvalues().cwiseMax(lambda_reg);
  WgikKernel k;
  k.Q = eig.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  double maxdist = 0.0;
  Matrix qt = train * k.Q.transpose();
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index j = i + 1; j < N; ++j) {
      maxdist = std::max(maxdist, (qt.row(i) - qt.row(j)).lpNorm<1>());
    }
  }
  k.L = 1.0 + maxdist;
  return k;
}

struct SvcModel {
  Vector alphas;
  Matrix points;
  std::vector<Eigen::Index> sv_indices;       // alpha > tau
  std::vector<Eigen::Index> bsv_indices;      // tau < alpha < C - tau
  std::vector<Eigen::Index> outlier_indices;  // alpha >= C - tau
  double nu = 0.0;
  double theta = 0.0;
  double theta_spread = 0.0;  // max |f(bsv) - theta| over boundary points
};

// Level-set description {w : f(w) <= radius} with
// f(w) = sum_{i in SV} alpha_i ||Q (w - w_i)||_1.
struct SvcUncertaintySet {
  Vector alphas;
  Matrix sv_points;
  Matrix Q;
  double radius = 0.0;
  Vector phi_mean;  // carried for serialization; empty when data is unlifted

  Eigen::Index dim() const { return sv_points.cols(); }
};

inline double eval_f(const SvcUncertaintySet& set, const Vector& w) {
  if (w.size() != set.dim()) throw std::invalid_argument("eval_f: dimension mismatch");
  double f = 0.0;
  for (Eigen::Index i = 0; i < set.sv_points.rows(); ++i) {
    f += set.alphas[i] * (set.Q * (w - set.sv_points.row(i).transpose())).lpNorm<1>();
  }
  return f;
}

// Raw ingredients of the linear-inequality representation of the set.
struct PolytopeData {
  Vector alphas;
  Matrix sv_points;
  Matrix Q;
  double radius = 0.0;
};

inline PolytopeData polytope_data(const SvcUncertaintySet& set) {
  return {set.alphas, set.sv_points, set.Q, set.radius};
}

inline double compute_theta(const SvcModel& model, const WgikKernel& kernel, double* spread_out = nullptr) {
  if (model.bsv_indices.empty()) {
    throw std::runtime_error("compute_theta: no boundary points; adjust nu or enlarge the training set");
  }
  SvcUncertaintySet tmp;
  tmp.Q = kernel.Q;
  tmp.alphas = Vector(static_cast<Eigen::Index>(model.sv_indices.size()));
  tmp.sv_points = Matrix(static_cast<Eigen::Index>(model.sv_indices.size()), model.points.cols());
  for (size_t k = 0; k < model.sv_indices.size(); ++k) {
    tmp.alphas[static_cast<Eigen::Index>(k)] = model.alphas[model.sv_indices[k]];
    tmp.sv_points.row(static_cast<Eigen::Index>(k)) = model.points.row(model.sv_indices[k]);
  }
  double sum = 0.0, lo = kInf, hi = -kInf;
  for (Eigen::Index i : model.bsv_indices) {
    const double f = eval_f(tmp, model.points.row(i).transpose());
    sum += f;
    lo = std::min(lo, f);
    hi = std::max(hi, f);
  }
  const double theta = sum / static_cast<double>(model.bsv_indices.size());
  if (spread_out) *spread_out = std::max(hi - theta, theta - lo);
  return theta;
}

// Dual problem: max over alpha of -alpha' K alpha + sum_i alpha_i K_ii
// subject to 0 <= alpha_i <= 1/(N nu) and sum alpha = 1.
inline QuadraticProgram svc_dual_qp(const Matrix& train, double nu, const WgikKernel& kernel) {
  const Eigen::Index N = train.rows();
  Matrix qt = train * kernel.Q.transpose();
  Matrix K(N, N);
  for (Eigen::Index i = 0; i < N; ++i) {
    K(i, i) = kernel.L;
    for (Eigen::Index j = i + 1; j < N; ++j) {
      K(i, j) = K(j, i) = kernel.L - (qt.row(i) - qt.row(j)).lpNorm<1>();
    }
  }
  QuadraticProgram qp;
  qp.P = 2.0 * K;
  qp.q = -K.diagonal();
  const double cap = 1.0 / (static_cast<double>(N) * nu);
  qp.A = Matrix(N + 1, N);
  qp.A.topRows(N) = Matrix::Identity(N, N);
  qp.A.row(N) = Matrix::Ones(1, N);
  qp.lower = Vector::Zero(N + 1);
  qp.upper = Vector::Constant(N + 1, cap);
  qp.lower[N] = qp.upper[N] = 1.0;
  return qp;
}

inline SvcModel train_svc(const Matrix& train, double nu, const WgikKernel& kernel,
                          const SolverSettings& settings = SolverSettings()) {
  const Eigen::Index N = train.rows();
  if (!(nu > 0.0 && nu < 1.0)) throw std::invalid_argument("train_svc: nu must be in (0,1)");
  if (!(static_cast<double>(N) * nu > 1.0)) throw std::invalid_argument("train_svc: need N*nu > 1");
  QuadraticProgram qp = svc_dual_qp(train, nu, kernel);
  QpSolution sol = solve_qp(qp, settings);
  if (sol.status != SolveStatus::kOptimal) {
    throw std::runtime_error(std::string("train_svc: dual QP not solved (") + to_string(sol.status) + ")");
  }
  SvcModel model;
  model.nu = nu;
  model.points = train;
  model.alphas = sol.z.cwiseMax(0.0);
  model.alphas /= model.alphas.sum();
  const double cap = 1.0 / (static_cast<double>(N) * nu);
  const double tau = 1e-6 * cap;
  for (Eigen::Index i = 0; i < N; ++i) {
    const double a = model.alphas[i];
    if (a <= tau) continue;
    model.sv_indices.push_back(i);
    if (a >= cap - tau) {
      model.outlier_indices.push_back(i);
    } else {
      model.bsv_indices.push_back(i);
    }
  }
  if (model.bsv_indices.empty()) {
    throw std::runtime_error("train_svc: no boundary support vectors; adjust nu or enlarge the training set");
  }
  model.theta = compute_theta(model, kernel, &model.theta_spread);
  return model;
}

inline SvcUncertaintySet make_uncertainty_set(const SvcModel& model, const WgikKernel& kernel,
                                              const Vector& phi_mean = Vector()) {
  SvcUncertaintySet set;
  set.Q = kernel.Q;
  set.radius = model.theta;
  set.phi_mean = phi_mean;
  const Eigen::Index ns = static_cast<Eigen::Index>(model.sv_indices.size());
  set.alphas = Vector(ns);
  set.sv_points = Matrix(ns, model.points.cols());
  for (Eigen::Index k = 0; k < ns; ++k) {
    set.alphas[k] = model.alphas[model.sv_indices[static_cast<size_t>(k)]];
    set.sv_points.row(k) = model.points.row(model.sv_indices[static_cast<size_t>(k)]);
  }
  return set;
}

inline nlohmann::json set_to_json(const SvcUncertaintySet& set) {
  nlohmann::json j;
  j["alphas"] = std::vector<double>(set.alphas.begin(), set.alphas.end());
  std::vector<std::vector<double>> pts;
  for (Eigen::Index i = 0; i < set.sv_points.rows(); ++i) {
    pts.emplace_back(set.sv_points.row(i).begin(), set.sv_points.row(i).end());
  }
  j["sv_points"] = pts;
  std::vector<std::vector<double>> q;
  for (Eigen::Index i = 0; i < set.Q.rows(); ++i) q.emplace_back(set.Q.row(i).begin(), set.Q.row(i).end());
  j["Q"] = q;
  j["radius"] = set.radius;
  j["phi_mean"] = std::vector<double>(set.phi_mean.begin(), set.phi_mean.end());
  return j;
}

inline SvcUncertaintySet set_from_json(const nlohmann::json& j) {
  SvcUncertaintySet set;
  const auto& al = j.at("alphas");
  set.alphas = Vector(static_cast<Eigen::Index>(al.size()));
  for (size_t i = 0; i < al.size(); ++i) set.alphas[static_cast<Eigen::Index>(i)] = al[i].get<double>();
  const auto& pts = j.at("sv_points");
  const auto& qm = j.at("Q");
  const Eigen::Index d = static_cast<Eigen::Index>(qm.size());
  set.sv_points = Matrix(static_cast<Eigen::Index>(pts.size()), d);
  for (size_t i = 0; i < pts.size(); ++i) {
    for (Eigen::Index k = 0; k < d; ++k) set.sv_points(static_cast<Eigen::Index>(i), k) = pts[i][static_cast<size_t>(k)].get<double>();
  }
  set.Q = Matrix(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) set.Q(i, k) = qm[static_cast<size_t>(i)][static_cast<size_t>(k)].get<double>();
  }
  set.radius = j.at("radius").get<double>();
  if (j.contains("phi_mean")) {
    const auto& pm = j.at("phi_mean");
    set.phi_mean = Vector(static_cast<Eigen::Index>(pm.size()));
    for (size_t i = 0; i < pm.size(); ++i) set.phi_mean[static_cast<Eigen::Index>(i)] = pm[i].get<double>();
  }
  return set;
}

}  // namespace ddsmpc

#endif  // DDSMPC_SVC_HPP_
