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
#include <sstream>

#include "ddsmpc/lti.hpp"

namespace ddsmpc {
namespace {

LtiModel two_mass_spring() {
  const double K = 1.0, m1 = 0.5, m2 = 2.0;
  LtiModel m;
  m.A = Matrix(4, 4);
  m.A << 1, 0, 0.1, 0,
      0, 1, 0, 0.1,
      -K / m1, 0.1 * K / m1, 1, 0,
      K / m2, -0.1 * K / m2, 0, 1;
  m.B_u = Matrix(4, 1);
  m.B_u << 0, 0, 0.1 / m1, 0;
  m.B_w = Matrix(4, 1);
  m.B_w << 1.0, 0.5, 0.3, 0.4;
  m.B_v = Matrix(4, 0);
  return m;
}

LtiModel building_model() {
  LtiModel m;
  m.A = Matrix(4, 4);
  m.A << 0.0167, 0.0048, 0.1245, 0.1409,
      0.0005, 0.0002, 0.0039, 0.0044,
      0.0253, 0.0073, 0.3321, 0.0617,
      0.0244, 0.0070, 0.0526, 0.3456;
  m.B_u = Matrix(4, 1);
  m.B_u << 0.0986, 0.0029, 0.0288, 0.0275;
  m.B_w = Matrix(4, 1);
  m.B_w << 0.2536, 0.0070, 0.4450, 0.4477;
  m.B_v = Matrix(4, 2);
  m.B_v << 0.2536, 0.4596,
      0.0070, 0.9840,
      0.4450, 0.1287,
      0.4477, 0.1225;
  return m;
}

TEST_CASE("prediction matrices: single-step horizon reduces to the raw blocks") {
  LtiModel m = two_mass_spring();
  PredictionMatrices pm = build_prediction_matrices(m, 1);
  REQUIRE((pm.Abold - m.A).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((pm.Bu_bold - m.B_u).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((pm.Bw_bold - m.B_w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("prediction matrices: H=2 cross block equals A*B_u") {
  LtiModel m = two_mass_spring();
  PredictionMatrices pm = build_prediction_matrices(m, 2);
  Matrix expected = m.A * m.B_u;
  REQUIRE((pm.Bu_bold.block(4, 0, 4, 1) - expected).cwiseAbs().maxCoeff() < 1e-14);
  REQUIRE((pm.Bu_bold.block(4, 1, 4, 1) - m.B_u).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(pm.Bu_bold.block(0, 1, 4, 1).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((pm.Abold.bottomRows(4) - m.A * m.A).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("prediction matrices: identity dynamics give identity state blocks") {
  LtiModel m;
  m.A = Matrix::Identity(3, 3);
  m.B_u = Matrix::Ones(3, 2);
  m.B_w = Matrix::Ones(3, 1);
  m.B_v = Matrix(3, 0);
  PredictionMatrices pm = build_prediction_matrices(m, 5);
  for (Eigen::Index t = 0; t < 5; ++t) {
    REQUIRE((pm.Abold.middleRows(3 * t, 3) - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("prediction matrices: H=0 rejected") {
  REQUIRE_THROWS_AS(build_prediction_matrices(two_mass_spring(), 0), std::invalid_argument);
}

TEST_CASE("simulate_step: zero arguments map to zero") {
  LtiModel m = two_mass_spring();
  Vector z = simulate_step(m, Vector::Zero(4), Vector::Zero(1), Vector::Zero(1));
  REQUIRE(z.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("simulate_step: free response from the benchmark initial state") {
  LtiModel m = two_mass_spring();
  Vector x0(4);
  x0 << 0.2, 1.0, -0.1, 0.1;
  Vector got = simulate_step(m, x0, Vector::Zero(1), Vector::Zero(1));
  // Hand multiply: row by row against the printed matrix.
  Vector expected(4);
  expected << 0.2 - 0.01, 1.0 + 0.01, -2.0 * 0.2 + 0.2 * 1.0 - 0.1, 0.5 * 0.2 - 0.05 * 1.0 + 0.1;
  REQUIRE((got - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("simulate_step: deterministic channel feeds through B_v") {
  LtiModel m = building_model();
  Vector v(2);
  v << 2.0, -1.0;
  Vector got = simulate_step(m, Vector::Zero(4), Vector::Zero(1), Vector::Zero(1), v);
  Vector expected = m.B_v * v;
  REQUIRE((got - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("simulate_step: dimension mismatch rejected") {
  LtiModel m = two_mass_spring();
  REQUIRE_THROWS_AS(simulate_step(m, Vector::Zero(3), Vector::Zero(1), Vector::Zero(1)), std::invalid_argument);
  REQUIRE_THROWS_AS(simulate_step(m, Vector::Zero(4), Vector::Zero(2), Vector::Zero(1)), std::invalid_argument);
  LtiModel b = building_model();
  REQUIRE_THROWS_AS(simulate_step(b, Vector::Zero(4), Vector::Zero(1), Vector::Zero(1), Vector::Zero(3)),
                    std::invalid_argument);
}

TEST_CASE("stacked form matches rolled-out simulation") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  LtiModel m = building_model();
  const Eigen::Index H = 6;
  PredictionMatrices pm = build_prediction_matrices(m, H);
  Vector x0(4), u(H), w(H), v(2 * H);
  for (Eigen::Index i = 0; i < 4; ++i) x0[i] = gauss(rng);
  for (Eigen::Index i = 0; i < H; ++i) u[i] = gauss(rng);
  for (Eigen::Index i = 0; i < H; ++i) w[i] = gauss(rng);
  for (Eigen::Index i = 0; i < 2 * H; ++i) v[i] = gauss(rng);

  Vector stacked = pm.Abold * x0 + pm.Bu_bold * u + pm.Bw_bold * w + pm.Bv_bold * v;
  Vector x = x0;
  for (Eigen::Index t = 0; t < H; ++t) {
    x = simulate_step(m, x, u.segment(t, 1), w.segment(t, 1), v.segment(2 * t, 2));
    REQUIRE((stacked.segment(4 * t, 4) - x).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("model JSON round trip, optional B_v") {
  nlohmann::json j;
  j["A"] = {{1.0, 0.5}, {0.0, 1.0}};
  j["B_u"] = {{0.1}, {0.2}};
  j["B_w"] = {{1.0}, {0.0}};
  LtiModel m = model_from_json(j);
  REQUIRE(m.n_x() == 2);
  REQUIRE(m.n_v() == 0);
  REQUIRE(m.A(0, 1) == 0.5);

  j["B_v"] = {{0.3, 0.4}, {0.5, 0.6}};
  LtiModel m2 = model_from_json(j);
  REQUIRE(m2.n_v() == 2);
  REQUIRE(m2.B_v(1, 0) == 0.5);

  nlohmann::json bad = j;
  bad["A"] = {{1.0, 0.5}};
  REQUIRE_THROWS(model_from_json(bad));
}

}  // namespace
}  // namespace ddsmpc
