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

// Linear time-invariant plant model, horizon stacking, single-step simulation.

#ifndef DDSMPC_LTI_HPP_
#define DDSMPC_LTI_HPP_

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddsmpc/qp.hpp"
#include "json.hpp"

namespace ddsmpc {

// Discrete-time plant x+ = A x + B_u u + B_w w + B_v v. The deterministic
// input channel B_v is optional and has zero columns when absent.
struct LtiModel {
  Matrix A;
  Matrix B_u;
  Matrix B_w;
  Matrix B_v;

  Eigen::Index n_x() const { return A.rows(); }
  Eigen::Index n_u() const { return B_u.cols(); }
  Eigen::Index n_w() const { return B_w.cols(); }
  Eigen::Index n_v() const { return B_v.cols(); }

  void validate() const {
    const Eigen::Index n = A.rows();
    if (n < 1 || A.cols() != n) throw std::invalid_argument("LtiModel: A must be square and nonempty");
    if (B_u.rows() != n || B_u.cols() < 1) throw std::invalid_argument("LtiModel: B_u dimension mismatch");
    if (B_w.rows() != n || B_w.cols() < 1) throw std::invalid_argument("LtiModel: B_w dimension mismatch");
    if (B_v.cols() > 0 && B_v.rows() != n) throw std::invalid_argument("LtiModel: B_v dimension mismatch");
  }
};

// Stacked H-step prediction x = Abold x0 + Bu_bold u + Bw_bold w + Bv_bold v
// with block (t,j) of each input map equal to A^(t-1-j) B for j < t.
struct PredictionMatrices {
  Matrix Abold;
  Matrix Bu_bold;
  Matrix Bw_bold;
  Matrix Bv_bold;
  Eigen::Index H = 0;
};

inline PredictionMatrices build_prediction_matrices(const LtiModel& model, Eigen::Index H) {
  model.validate();
  if (H < 1) throw std::invalid_argument("build_prediction_matrices: H must be >= 1");
  const Eigen::Index nx = model.n_x(), nu = model.n_u(), nw = model.n_w(), nv = model.n_v();
  PredictionMatrices pm;
  pm.H = H;
  pm.Abold = Matrix::Zero(H * nx, nx);
  pm.Bu_bold = Matrix::Zero(H * nx, H * nu);
  pm.Bw_bold = Matrix::Zero(H * nx, H * nw);
  pm.Bv_bold = Matrix::Zero(H * nx, H * nv);
  Matrix Apow = Matrix::Identity(nx, nx);  // A^0
  std::vector<Matrix> powers;
  powers.reserve(static_cast<size_t>(H));
  for (Eigen::Index t = 0; t < H; ++t) {
    powers.push_back(Apow);
    Apow = model.A * Apow;
    pm.Abold.middleRows(t * nx, nx) = Apow;
  }
  for (Eigen::Index t = 1; t <= H; ++t) {
    for (Eigen::Index j = 0; j < t; ++j) {
      const Matrix& P = powers[static_cast<size_t>(t - 1 - j)];
      pm.Bu_bold.block((t - 1) * nx, j * nu, nx, nu) = P * model.B_u;
      pm.Bw_bold.block((t - 1) * nx, j * nw, nx, nw) = P * model.B_w;
      if (nv > 0) pm.Bv_bold.block((t - 1) * nx, j * nv, nx, nv) = P * model.B_v;
    }
  }
  return pm;
}

inline Vector simulate_step(const LtiModel& model, const Vector& x, const Vector& u, const Vector& w,
                            const Vector& v = Vector()) {
  if (x.size() != model.n_x() || u.size() != model.n_u() || w.size() != model.n_w()) {
    throw std::invalid_argument("simulate_step: dimension mismatch");
  }
  Vector next = model.A * x + model.B_u * u + model.B_w * w;
  if (v.size() > 0) {
    if (v.size() != model.n_v()) throw std::invalid_argument("simulate_step: v dimension mismatch");
    next += model.B_v * v;
  }
  return next;
}

namespace detail {

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& key) {
  const auto& rows = j.at(key);
  if (!rows.is_array() || rows.empty()) throw std::invalid_argument("model JSON: \"" + key + "\" must be a nonempty array");
  const size_t r = rows.size();
  const size_t c = rows[0].is_array() ? rows[0].size() : 1;
  Matrix M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  for (size_t i = 0; i < r; ++i) {
    if (rows[i].is_array()) {
      if (rows[i].size() != c) throw std::invalid_argument("model JSON: ragged rows in \"" + key + "\"");
      for (size_t k = 0; k < c; ++k) M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k].get<double>();
    } else {
      M(static_cast<Eigen::Index>(i), 0) = rows[i].get<double>();
    }
  }
  return M;
}

}  // namespace detail

inline LtiModel model_from_json(const nlohmann::json& j) {
  LtiModel m;
  m.A = detail::matrix_from_json(j, "A");
  m.B_u = detail::matrix_from_json(j, "B_u");
  m.B_w = detail::matrix_from_json(j, "B_w");
  m.B_v = j.contains("B_v") ? detail::matrix_from_json(j, "B_v") : Matrix(m.A.rows(), 0);
  m.validate();
  return m;
}

inline LtiModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return model_from_json(j);
}

}  // namespace ddsmpc

#endif  // DDSMPC_LTI_HPP_
