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

// Finite-horizon robust controllers over the saturated disturbance-feedback
// policy u = h + M phi_c(w): set-based robust (DDRO), scenario-based, and
// hyper-rectangle robust, plus a softened always-feasible backup.

#ifndef DDSMPC_CONTROLLERS_HPP_
#define DDSMPC_CONTROLLERS_HPP_

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ddsmpc/calibration.hpp"
#include "ddsmpc/lti.hpp"
#include "ddsmpc/scenarios.hpp"
#include "ddsmpc/svc.hpp"

namespace ddsmpc {

struct StateConstraint {
  Matrix F;  // rows x n_x; may be empty for unconstrained stages
  Vector f;
};

struct ControlSpec {
  LtiModel model;
  Eigen::Index H = 0;
  Matrix Q, R, Q_f;
  std::vector<StateConstraint> state_constraints;  // index t-1 holds stage t in 1..H
  Matrix G;  // per-stage input polytope G u <= g
  Vector g;
  SaturationKind saturation = SaturationKind::kTanh;
  MomentEstimates moments;
  GuaranteeParams guarantee;
  Vector phi_mean;  // training-time centering of phi, length H*n_w
  bool enforce_sample_sizes = true;

  void validate() const {
    model.validate();
    if (H < 1) throw std::invalid_argument("ControlSpec: H must be >= 1");
    const Eigen::Index nx = model.n_x(), nu = model.n_u(), nw = model.n_w();
    auto check_psd = [](const Matrix& S, const std::string& name) {
      if (S.rows() != S.cols()) throw std::invalid_argument("ControlSpec: " + name + " not square");
      Eigen::SelfAdjointEigenSolver<Matrix> eig(S);
      if (eig.eigenvalues().minCoeff() < -1e-9) throw std::invalid_argument("ControlSpec: " + name + " not PSD");
    };
    check_psd(Q, "Q");
    check_psd(Q_f, "Q_f");
    if (Q.rows() != nx || Q_f.rows() != nx) throw std::invalid_argument("ControlSpec: cost dimension mismatch");
    if (R.rows() != nu || R.cols() != nu) throw std::invalid_argument("ControlSpec: R dimension mismatch");
    Eigen::SelfAdjointEigenSolver<Matrix> eigR(R);
    if (eigR.eigenvalues().minCoeff() <= 0.0) throw std::invalid_argument("ControlSpec: R must be positive definite");
    if (static_cast<Eigen::Index>(state_constraints.size()) != H) {
      throw std::invalid_argument("ControlSpec: need one state-constraint entry per stage");
    }
    for (const auto& sc : state_constraints) {
      if (sc.F.rows() != sc.f.size()) throw std::invalid_argument("ControlSpec: state constraint row mismatch");
      if (sc.F.rows() > 0 && sc.F.cols() != nx) throw std::invalid_argument("ControlSpec: F column mismatch");
    }
    if (G.rows() != g.size() || G.rows() < 1 || G.cols() != nu) {
      throw std::invalid_argument("ControlSpec: input polytope dimension mismatch");
    }
    if (phi_mean.size() != H * nw) throw std::invalid_argument("ControlSpec: phi_mean must have length H*n_w");
    guarantee.validate();
  }
};

struct PolicyDecision {
  Matrix M;  // strictly lower-block-triangular, H n_u x H n_w
  Vector h;
};

struct RectSet {
  Vector gamma_min;
  Vector gamma_max;
};

inline RectSet rect_fit(const ScenarioSet& set) {
  set.validate();
  return {set.data.colwise().minCoeff().transpose(), set.data.colwise().maxCoeff().transpose()};
}

inline RectSet rect_fit(const ScenarioSet& set, const GuaranteeParams& g) {
  const long long need = scenario_sample_size(rect_decision_count(set.H, set.n_w), g);
  if (set.count() < need) {
    throw std::invalid_argument("rect_fit: need " + std::to_string(need) + " scenarios, have " +
                                std::to_string(set.count()));
  }
  return rect_fit(set);
}

enum class ControllerKind { kDdro, kSsmpc, kRect, kBackup };
enum class DdroEncoding { kCondensed, kPerSv };

// Assembled QP plus everything needed to retarget it to a new initial state,
// forecast, or constraint schedule without rebuilding P and A.
struct BuiltProblem {
  QuadraticProgram qp;
  ControllerKind kind = ControllerKind::kDdro;
  Eigen::Index H = 0, n_x = 0, n_u = 0, n_w = 0;
  Eigen::Index n_h = 0, n_m = 0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> m_entries;  // (row, col) of M per variable
  Eigen::Index slack_begin = 0, n_slack = 0;
  double penalty = 0.0;

  // Objective refresh data: q.head(n_h) = Hq * x_free, rest constant;
  // constant = x_free' Qbar x_free + c_ww.
  Matrix Hq;
  Vector q_rest;
  Matrix Qbar;
  double c_ww = 0.0;
  double constant = 0.0;

  // Bound refresh data: upper = upper_nonf + f(schedule) - bound_coef * x_free.
  Vector upper_nonf;
  Matrix bound_coef;                          // rows x (H n_x), stored dense
  std::vector<std::pair<int, int>> row_stage;  // (t-1, j) into the schedule, or (-1,-1)

  // x_free = Abold x0 + Bv_bold vbar.
  Matrix Abold;
  Matrix Bv_bold;

  Vector x_free;  // last refresh, kept for violation checks
};

namespace detail {

struct Stacked {
  PredictionMatrices pm;
  Matrix Qbar;   // H n_x square
  Matrix W;      // Rbar + Bu' Qbar Bu
  Matrix X;      // Bu' Qbar Bw
  Matrix Gbar;   // H m_G x H n_u
  Vector gbar;
  double c_ww = 0.0;
  Matrix S_eff;  // PSD-floored S_phiphi
};

inline Stacked stack(const ControlSpec& spec) {
  Stacked s;
  const Eigen::Index nx = spec.model.n_x(), nu = spec.model.n_u(), H = spec.H;
  s.pm = build_prediction_matrices(spec.model, H);
  s.Qbar = Matrix::Zero(H * nx, H * nx);
  for (Eigen::Index t = 0; t < H; ++t) {
    s.Qbar.block(t * nx, t * nx, nx, nx) = (t + 1 == H) ? spec.Q_f : spec.Q;
  }
  Matrix Rbar = Matrix::Zero(H * nu, H * nu);
  for (Eigen::Index t = 0; t < H; ++t) Rbar.block(t * nu, t * nu, nu, nu) = spec.R;
  s.W = Rbar + s.pm.Bu_bold.transpose() * s.Qbar * s.pm.Bu_bold;
  s.X = s.pm.Bu_bold.transpose() * s.Qbar * s.pm.Bw_bold;
  const Eigen::Index mg = spec.G.rows();
  s.Gbar = Matrix::Zero(H * mg, H * nu);
  s.gbar = Vector(H * mg);
  for (Eigen::Index t = 0; t < H; ++t) {
    s.Gbar.block(t * mg, t * nu, mg, nu) = spec.G;
    s.gbar.segment(t * mg, mg) = spec.g;
  }
  s.c_ww = (s.pm.Bw_bold.transpose() * s.Qbar * s.pm.Bw_bold * spec.moments.S_ww).trace();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(spec.moments.S_phiphi);
  Vector ev = eig.eigenvalues().cwiseMax(0.0);
  s.S_eff = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
  return s;
}

// Rows/entries collected before the final dense assembly.
struct RowBuf {
  std::vector<std::vector<std::pair<Eigen::Index, double>>> rows;
  std::vector<double> lower, upper_nonf;
  std::vector<std::vector<std::pair<Eigen::Index, double>>> bound_rows;  // x_free coefficients
  std::vector<std::pair<int, int>> stage;

  Eigen::Index add(std::vector<std::pair<Eigen::Index, double>> coeffs, double lo, double up_nonf,
                   std::pair<int, int> st = {-1, -1},
                   std::vector<std::pair<Eigen::Index, double>> bc = {}) {
    rows.push_back(std::move(coeffs));
    lower.push_back(lo);
    upper_nonf.push_back(up_nonf);
    stage.push_back(st);
    bound_rows.push_back(std::move(bc));
    return static_cast<Eigen::Index>(rows.size()) - 1;
  }
};

// Objective, policy-variable layout, and robust input constraints shared by
// every controller.
inline void build_core(const ControlSpec& spec, const Stacked& s, BuiltProblem& bp, RowBuf& buf,
                       Eigen::Index extra_vars) {
  const Eigen::Index H = spec.H, nu = spec.model.n_u(), nw = spec.model.n_w();
  bp.H = H;
  bp.n_x = spec.model.n_x();
  bp.n_u = nu;
  bp.n_w = nw;
  bp.n_h = H * nu;
  bp.m_entries.clear();
  for (Eigen::Index t = 1; t < H; ++t) {
    for (Eigen::Index j = 0; j < t; ++j) {
      for (Eigen::Index p = 0; p < nu; ++p) {
        for (Eigen::Index l = 0; l < nw; ++l) {
          bp.m_entries.emplace_back(t * nu + p, j * nw + l);
        }
      }
    }
  }
  bp.n_m = static_cast<Eigen::Index>(bp.m_entries.size());

  const Eigen::Index mg = spec.G.rows();
  // Input auxiliaries: one per (Gbar row, reachable phi coordinate).
  std::vector<std::vector<Eigen::Index>> evar(static_cast<size_t>(H * mg));
  Eigen::Index n_e = 0;
  for (Eigen::Index t = 1; t < H; ++t) {
    for (Eigen::Index r = 0; r < mg; ++r) {
      evar[static_cast<size_t>(t * mg + r)].resize(static_cast<size_t>(t * nw));
      for (Eigen::Index k = 0; k < t * nw; ++k) evar[static_cast<size_t>(t * mg + r)][static_cast<size_t>(k)] = n_e++;
    }
  }
  const Eigen::Index e_begin = bp.n_h + bp.n_m;
  const Eigen::Index n = bp.n_h + bp.n_m + n_e + extra_vars;

  bp.qp.P = Matrix::Zero(n, n);
  bp.qp.P.topLeftCorner(bp.n_h, bp.n_h) = 2.0 * s.W;
  for (Eigen::Index a = 0; a < bp.n_m; ++a) {
    const auto [pa, la] = bp.m_entries[static_cast<size_t>(a)];
    for (Eigen::Index b = 0; b < bp.n_m; ++b) {
      const auto [pb, lb] = bp.m_entries[static_cast<size_t>(b)];
      bp.qp.P(bp.n_h + a, bp.n_h + b) = 2.0 * s.W(pa, pb) * s.S_eff(la, lb);
    }
  }

  bp.Hq = Matrix::Zero(n, spec.H * spec.model.n_x());
  bp.Hq.topRows(bp.n_h) = 2.0 * s.pm.Bu_bold.transpose() * s.Qbar;
  bp.q_rest = Vector::Zero(n);
  Matrix XS = s.X * spec.moments.S_wphi;
  for (Eigen::Index a = 0; a < bp.n_m; ++a) {
    const auto [p, l] = bp.m_entries[static_cast<size_t>(a)];
    bp.q_rest[bp.n_h + a] = 2.0 * XS(p, l);
  }
  bp.Qbar = s.Qbar;
  bp.c_ww = s.c_ww;
  bp.Abold = s.pm.Abold;
  bp.Bv_bold = s.pm.Bv_bold;

  // Robust input constraints over the shifted saturation box
  // [-1 - m_k, 1 - m_k] per phi coordinate.
  for (Eigen::Index row = 0; row < H * mg; ++row) {
    const Eigen::Index t = row / mg;
    std::vector<std::pair<Eigen::Index, double>> main;
    for (Eigen::Index p = 0; p < H * nu; ++p) {
      if (s.Gbar(row, p) != 0.0) main.emplace_back(p, s.Gbar(row, p));
    }
    for (Eigen::Index k = 0; k < t * nw; ++k) {
      const Eigen::Index ev = e_begin + evar[static_cast<size_t>(row)][static_cast<size_t>(k)];
      main.emplace_back(ev, 1.0);
      const double a_k = -1.0 - spec.phi_mean[k];
      const double b_k = 1.0 - spec.phi_mean[k];
      // e >= (Gbar M)_{row,k} a_k and e >= (Gbar M)_{row,k} b_k.
      std::vector<std::pair<Eigen::Index, double>> ra{{ev, 1.0}}, rb{{ev, 1.0}};
      for (Eigen::Index mvar = 0; mvar < bp.n_m; ++mvar) {
        const auto [p, l] = bp.m_entries[static_cast<size_t>(mvar)];
        if (l != k || s.Gbar(row, p) == 0.0) continue;
        ra.emplace_back(bp.n_h + mvar, -a_k * s.Gbar(row, p));
        rb.emplace_back(bp.n_h + mvar, -b_k * s.Gbar(row, p));
      }
      buf.add(std::move(ra), 0.0, kInf);
      buf.add(std::move(rb), 0.0, kInf);
    }
    buf.add(std::move(main), -kInf, s.gbar[row]);
  }
}

// Row coefficient of stage-t constraint row j on the stacked input vector.
inline Vector stage_rvec(const Stacked& s, const ControlSpec& spec, Eigen::Index t, Eigen::Index j) {
  const Eigen::Index nx = spec.model.n_x();
  return (spec.state_constraints[static_cast<size_t>(t)].F.row(j) *
          s.pm.Bu_bold.middleRows(t * nx, nx))
      .transpose();
}

inline Vector stage_awvec(const Stacked& s, const ControlSpec& spec, Eigen::Index t, Eigen::Index j) {
  const Eigen::Index nx = spec.model.n_x();
  return (spec.state_constraints[static_cast<size_t>(t)].F.row(j) *
          s.pm.Bw_bold.middleRows(t * nx, nx))
      .transpose();
}

inline std::vector<std::pair<Eigen::Index, double>> xfree_coeffs(const ControlSpec& spec, Eigen::Index t,
                                                                 Eigen::Index j) {
  std::vector<std::pair<Eigen::Index, double>> bc;
  const Eigen::Index nx = spec.model.n_x();
  const Matrix& F = spec.state_constraints[static_cast<size_t>(t)].F;
  for (Eigen::Index c = 0; c < nx; ++c) {
    if (F(j, c) != 0.0) bc.emplace_back(t * nx + c, F(j, c));
  }
  return bc;
}

inline void assemble(const ControlSpec& spec, BuiltProblem& bp, RowBuf& buf) {
  const Eigen::Index n = bp.qp.P.rows();
  const Eigen::Index m = static_cast<Eigen::Index>(buf.rows.size());
  bp.qp.A = Matrix::Zero(m, n);
  bp.qp.lower = Vector(m);
  bp.upper_nonf = Vector(m);
  bp.bound_coef = Matrix::Zero(m, spec.H * spec.model.n_x());
  bp.row_stage = std::move(buf.stage);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (const auto& [c, v] : buf.rows[static_cast<size_t>(i)]) bp.qp.A(i, c) += v;
    bp.qp.lower[i] = buf.lower[static_cast<size_t>(i)];
    bp.upper_nonf[i] = buf.upper_nonf[static_cast<size_t>(i)];
    for (const auto& [c, v] : buf.bound_rows[static_cast<size_t>(i)]) bp.bound_coef(i, c) += v;
  }
  bp.qp.upper = bp.upper_nonf;
  bp.qp.q = bp.q_rest;
}

}  // namespace detail

// Retargets q, bounds, and the objective constant to a new initial state,
// deterministic-input forecast, and (optionally) stage constraint levels.
// P and A are untouched, so a solver factorization stays valid.
inline void refresh(BuiltProblem& bp, const ControlSpec& spec, const Vector& x0, const Vector& vbar = Vector(),
                    const std::vector<Vector>* f_override = nullptr) {
  if (x0.size() != bp.n_x) throw std::invalid_argument("refresh: x0 dimension mismatch");
  bp.x_free = bp.Abold * x0;
  if (vbar.size() > 0) {
    if (vbar.size() != bp.Bv_bold.cols()) throw std::invalid_argument("refresh: vbar dimension mismatch");
    bp.x_free += bp.Bv_bold * vbar;
  }
  bp.qp.q = bp.q_rest + bp.Hq * bp.x_free;
  bp.constant = bp.x_free.dot(bp.Qbar * bp.x_free) + bp.c_ww;
  Vector shift = bp.bound_coef * bp.x_free;
  bp.qp.upper = bp.upper_nonf - shift;
  for (Eigen::Index i = 0; i < bp.qp.upper.size(); ++i) {
    const auto [t, j] = bp.row_stage[static_cast<size_t>(i)];
    if (t < 0) continue;
    const Vector& f = f_override ? (*f_override)[static_cast<size_t>(t)]
                                 : spec.state_constraints[static_cast<size_t>(t)].f;
    bp.qp.upper[i] += f[j];
  }
}

// Scenario-based controller: one hard constraint per (stage row, scenario).
inline BuiltProblem build_ssmpc(const ControlSpec& spec, const Vector& x0, const LiftedScenarioSet& scenarios,
                                const Vector& vbar = Vector()) {
  spec.validate();
  if (scenarios.H != spec.H || scenarios.n_w != spec.model.n_w()) {
    throw std::invalid_argument("build_ssmpc: scenario dimensions mismatch");
  }
  if (spec.enforce_sample_sizes) {
    const long long need =
        scenario_sample_size(df_decision_count(spec.H, spec.model.n_u(), spec.model.n_w()), spec.guarantee);
    if (scenarios.count() < need) {
      throw std::invalid_argument("build_ssmpc: need " + std::to_string(need) + " scenarios, have " +
                                  std::to_string(scenarios.count()));
    }
  }
  detail::Stacked s = detail::stack(spec);
  BuiltProblem bp;
  bp.kind = ControllerKind::kSsmpc;
  detail::RowBuf buf;
  detail::build_core(spec, s, bp, buf, 0);
  const Eigen::Index d = spec.H * spec.model.n_w();
  for (Eigen::Index t = 0; t < spec.H; ++t) {
    const auto& sc = spec.state_constraints[static_cast<size_t>(t)];
    for (Eigen::Index j = 0; j < sc.F.rows(); ++j) {
      Vector rvec = detail::stage_rvec(s, spec, t, j);
      Vector aw = detail::stage_awvec(s, spec, t, j);
      for (Eigen::Index i = 0; i < scenarios.count(); ++i) {
        std::vector<std::pair<Eigen::Index, double>> row;
        for (Eigen::Index p = 0; p < bp.n_h; ++p) {
          if (rvec[p] != 0.0) row.emplace_back(p, rvec[p]);
        }
        for (Eigen::Index mvar = 0; mvar < bp.n_m; ++mvar) {
          const auto [p, l] = bp.m_entries[static_cast<size_t>(mvar)];
          const double coef = rvec[p] * scenarios.data(i, l);
          if (coef != 0.0) row.emplace_back(bp.n_h + mvar, coef);
        }
        const double wpart = aw.dot(scenarios.data.row(i).tail(d).transpose());
        buf.add(std::move(row), -kInf, -wpart, {static_cast<int>(t), static_cast<int>(j)},
                detail::xfree_coeffs(spec, t, j));
      }
    }
  }
  detail::assemble(spec, bp, buf);
  refresh(bp, spec, x0, vbar);
  return bp;
}

// Hyper-rectangle controller: interval support functions over the product box
// [phi(gamma_min) - m, phi(gamma_max) - m] x [gamma_min, gamma_max].
inline BuiltProblem build_rect(const ControlSpec& spec, const Vector& x0, const RectSet& rect,
                               const Vector& vbar = Vector()) {
  spec.validate();
  const Eigen::Index d = spec.H * spec.model.n_w();
  if (rect.gamma_min.size() != d || rect.gamma_max.size() != d) {
    throw std::invalid_argument("build_rect: rectangle dimension mismatch");
  }
  if ((rect.gamma_max - rect.gamma_min).minCoeff() < 0.0) {
    throw std::invalid_argument("build_rect: gamma_min > gamma_max");
  }
  detail::Stacked s = detail::stack(spec);
  BuiltProblem bp;
  bp.kind = ControllerKind::kRect;
  // Count extra variables: one per (stage row, reachable phi coordinate).
  Eigen::Index n_aux = 0;
  for (Eigen::Index t = 0; t < spec.H; ++t) {
    n_aux += spec.state_constraints[static_cast<size_t>(t)].F.rows() * t * spec.model.n_w();
  }
  detail::RowBuf buf;
  detail::build_core(spec, s, bp, buf, n_aux);
  Eigen::Index aux = bp.qp.P.rows() - n_aux;
  const Eigen::Index nw = spec.model.n_w();
  Vector philo(d), phihi(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    philo[k] = saturate(spec.saturation, rect.gamma_min[k]) - spec.phi_mean[k];
    phihi[k] = saturate(spec.saturation, rect.gamma_max[k]) - spec.phi_mean[k];
  }
  for (Eigen::Index t = 0; t < spec.H; ++t) {
    const auto& sc = spec.state_constraints[static_cast<size_t>(t)];
    for (Eigen::Index j = 0; j < sc.F.rows(); ++j) {
      Vector rvec = detail::stage_rvec(s, spec, t, j);
      Vector aw = detail::stage_awvec(s, spec, t, j);
      double wpart = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) {
        wpart += std::max(aw[k] * rect.gamma_min[k], aw[k] * rect.gamma_max[k]);
      }
      std::vector<std::pair<Eigen::Index, double>> main;
      for (Eigen::Index p = 0; p < bp.n_h; ++p) {
        if (rvec[p] != 0.0) main.emplace_back(p, rvec[p]);
      }
      const Eigen::Index reach = t * nw;  // stage t+1 state sees phi_0..phi_{t}
      for (Eigen::Index k = 0; k < reach; ++k) {
        const Eigen::Index ev = aux++;
        main.emplace_back(ev, 1.0);
        std::vector<std::pair<Eigen::Index, double>> ra{{ev, 1.0}}, rb{{ev, 1.0}};
        for (Eigen::Index mvar = 0; mvar < bp.n_m; ++mvar) {
          const auto [p, l] = bp.m_entries[static_cast<size_t>(mvar)];
          if (l != k || rvec[p] == 0.0) continue;
          ra.emplace_back(bp.n_h + mvar, -philo[k] * rvec[p]);
          rb.emplace_back(bp.n_h + mvar, -phihi[k] * rvec[p]);
        }
        buf.add(std::move(ra), 0.0, kInf);
        buf.add(std::move(rb), 0.0, kInf);
      }
      buf.add(std::move(main), -kInf, -wpart, {static_cast<int>(t), static_cast<int>(j)},
              detail::xfree_coeffs(spec, t, j));
    }
  }
  detail::assemble(spec, bp, buf);
  refresh(bp, spec, x0, vbar);
  return bp;
}

namespace detail {

// Per-coordinate data of the level-set function in sphered coordinates:
// f(w) = sum_k g_k((Q w)_k) with g_k(y) = sum_i alpha_i |y - c_{ik}|.
struct SetGeometry {
  Matrix C;     // ns x d, c_{ik} = (Q w_i)_k
  Matrix Gk;    // ns x d, g_k(c_{ik})
  Matrix Qinv;  // d x d
};

inline SetGeometry set_geometry(const SvcUncertaintySet& set) {
  SetGeometry geo;
  const Eigen::Index ns = set.sv_points.rows(), d = set.dim();
  geo.C = set.sv_points * set.Q.transpose();
  geo.Gk = Matrix::Zero(ns, d);
  for (Eigen::Index k = 0; k < d; ++k) {
    for (Eigen::Index i = 0; i < ns; ++i) {
      double gsum = 0.0;
      for (Eigen::Index i2 = 0; i2 < ns; ++i2) gsum += set.alphas[i2] * std::abs(geo.C(i, k) - geo.C(i2, k));
      geo.Gk(i, k) = gsum;
    }
  }
  geo.Qinv = set.Q.inverse();
  return geo;
}

}  // namespace detail

// Set-based robust controller. The condensed encoding exploits the
// coordinate separability of the level-set function through its conjugate;
// the per-support-vector encoding carries explicit dual pairs (mu, eta) and
// is kept for small instances and cross-checks.
inline BuiltProblem build_ddro(const ControlSpec& spec, const Vector& x0, const SvcUncertaintySet& set,
                               const Vector& vbar = Vector(), DdroEncoding enc = DdroEncoding::kCondensed,
                               bool soften = false, double penalty = -1.0) {
  spec.validate();
  const Eigen::Index d = 2 * spec.H * spec.model.n_w();
  if (set.dim() != d) throw std::invalid_argument("build_ddro: set must live in the lifted space (dim 2 H n_w)");
  if (!(set.radius > 0.0)) throw std::invalid_argument("build_ddro: set radius unset; calibrate first");
  detail::Stacked s = detail::stack(spec);
  detail::SetGeometry geo = detail::set_geometry(set);
  const Eigen::Index ns = set.sv_points.rows();
  const Eigen::Index dphi = spec.H * spec.model.n_w();

  Eigen::Index n_rows_state = 0;
  for (const auto& sc : spec.state_constraints) n_rows_state += sc.F.rows();
  const Eigen::Index per_row_vars = enc == DdroEncoding::kCondensed ? 1 + d : 1 + 2 * ns * d;
  const Eigen::Index n_extra = n_rows_state * per_row_vars + (soften ? n_rows_state : 0);

  BuiltProblem bp;
  bp.kind = soften ? ControllerKind::kBackup : ControllerKind::kDdro;
  detail::RowBuf buf;
  detail::build_core(spec, s, bp, buf, n_extra);
  Eigen::Index var = bp.qp.P.rows() - n_extra;
  if (soften) {
    if (penalty < 0.0) {
      Eigen::SelfAdjointEigenSolver<Matrix> eq(spec.Q), er(spec.R);
      penalty = 1e4 * std::max(eq.eigenvalues().cwiseAbs().maxCoeff(), er.eigenvalues().cwiseAbs().maxCoeff());
    }
    bp.penalty = penalty;
    bp.slack_begin = bp.qp.P.rows() - n_rows_state;
    bp.n_slack = n_rows_state;
  }
  Eigen::Index slack = bp.slack_begin;

  for (Eigen::Index t = 0; t < spec.H; ++t) {
    const auto& sc = spec.state_constraints[static_cast<size_t>(t)];
    for (Eigen::Index j = 0; j < sc.F.rows(); ++j) {
      Vector rvec = detail::stage_rvec(s, spec, t, j);
      Vector aw = detail::stage_awvec(s, spec, t, j);
      // a = [a_phi(M); a_w] on the lifted vector; constant part of the
      // sphered coefficient: atil_const = Qinv * [0; a_w].
      Vector a_const = Vector::Zero(d);
      a_const.tail(dphi) = aw;
      Vector atil_const = geo.Qinv * a_const;

      // Coefficient of m-variable (p, l) on atil_k is Qinv(k, l) * rvec[p].
      const Eigen::Index lam = var++;
      if (enc == DdroEncoding::kCondensed) {
        const Eigen::Index tvars = var;
        var += d;
        // lambda >= 0
        buf.add({{lam, 1.0}}, 0.0, kInf);
        for (Eigen::Index k = 0; k < d; ++k) {
          // lambda + atil_k >= 0 and lambda - atil_k >= 0
          std::vector<std::pair<Eigen::Index, double>> rp{{lam, 1.0}}, rm{{lam, 1.0}};
          for (Eigen::Index mvar = 0; mvar < bp.n_m; ++mvar) {
            const auto [p, l] = bp.m_entries[static_cast<size_t>(mvar)];
            const double coef = geo.Qinv(k, l) * rvec[p];
            if (coef != 0.0) {
              rp.emplace_back(bp.n_h + mvar, coef);
              rm.emplace_back(bp.n_h + mvar, -coef);
            }
          }
          buf.add(std::move(rp), -atil_const[k], kInf);
          buf.add(std::move(rm), atil_const[k], kInf);
          // t_k >= c_{ik} atil_k - lambda g_k(c_{ik}) for every SV i.
          for (Eigen::Index i = 0; i < ns; ++i) {
            std::vector<std::pair<Eigen::Index, double>> row{{tvars + k, 1.0}, {lam, geo.Gk(i, k)}};
            for (Eigen::Index mvar = 0; mvar < bp.n_m; ++mvar) {
              const auto [p, l] = bp.m_entries[static_cast<size_t>(mvar)];
              const double coef = -geo.C(i, k) * geo.Qinv(k, l) * rvec[p];
              if (coef != 0.0) row.emplace_back(bp.n_h + mvar, coef);
            }
            buf.add(std::move(row), geo.C(i, k) * atil_const[k], kInf);
          }
        }
        // lambda radius + sum_k t_k + rvec h (- slack) <= f_tj - F x_free.
        std::vector<std::pair<Eigen::Index, double>> main{{lam, set.radius}};
        for (Eigen::Index k = 0; k < d; ++k) main.emplace_back(tvars + k, 1.0);
        for (Eigen::Index p = 0; p < bp.n_h; ++p) {
          if (rvec[p] != 0.0) main.emplace_back(p, rvec[p]);
        }
        if (soften) main.emplace_back(slack, -1.0);
        buf.add(std::move(main), -kInf, 0.0, {static_cast<int>(t), static_cast<int>(j)},
                detail::xfree_coeffs(spec, t, j));
      } else {
        // Explicit dual pairs: variables mu_{ik}, eta_{ik} >= 0.
        const Eigen::Index mu0 = var;
        var += ns * d;
        const Eigen::Index eta0 = var;
        var += ns * d;
        buf.add({{lam, 1.0}}, 0.0, kInf);
        for (Eigen::Index i = 0; i < ns; ++i) {
          for (Eigen::Index k = 0; k < d; ++k) {
            buf.add({{mu0 + i * d + k, 1.0}}, 0.0, kInf);
            buf.add({{eta0 + i * d + k, 1.0}}, 0.0, kInf);
            // mu + eta = lambda alpha_i (elementwise)
            buf.add({{mu0 + i * d + k, 1.0}, {eta0 + i * d + k, 1.0}, {lam, -set.alphas[i]}}, 0.0, 0.0);
          }
        }
        // Q' sum_i (mu_i - eta_i) = a(M) per lifted coordinate.
        for (Eigen::Index l = 0; l < d; ++l) {
          std::vector<std::pair<Eigen::Index, double>> row;
          for (Eigen::Index i = 0; i < ns; ++i) {
            for (Eigen::Index k = 0; k < d; ++k) {
              const double coef = set.Q(k, l);
              if (coef != 0.0) {
                row.emplace_back(mu0 + i * d + k, coef);
                row.emplace_back(eta0 + i * d + k, -coef);
              }
            }
          }
          if (l < dphi) {
            for (Eigen::Index mvar = 0; mvar < bp.n_m; ++mvar) {
              const auto [p, ml] = bp.m_entries[static_cast<size_t>(mvar)];
              if (ml == l && rvec[p] != 0.0) row.emplace_back(bp.n_h + mvar, -rvec[p]);
            }
            buf.add(std::move(row), 0.0, 0.0);
          } else {
            buf.add(std::move(row), a_const[l], a_const[l]);
          }
        }
        // sum_i (mu_i - eta_i)' Q w_i + lambda radius + rvec h <= f - F x_free.
        std::vector<std::pair<Eigen::Index, double>> main{{lam, set.radius}};
        for (Eigen::Index i = 0; i < ns; ++i) {
          for (Eigen::Index k = 0; k < d; ++k) {
            if (geo.C(i, k) != 0.0) {
              main.emplace_back(mu0 + i * d + k, geo.C(i, k));
              main.emplace_back(eta0 + i * d + k, -geo.C(i, k));
            }
          }
        }
        for (Eigen::Index p = 0; p < bp.n_h; ++p) {
          if (rvec[p] != 0.0) main.emplace_back(p, rvec[p]);
        }
        if (soften) main.emplace_back(slack, -1.0);
        buf.add(std::move(main), -kInf, 0.0, {static_cast<int>(t), static_cast<int>(j)},
                detail::xfree_coeffs(spec, t, j));
      }
      if (soften) {
        buf.add({{slack, 1.0}}, 0.0, kInf);  // slack >= 0
        ++slack;
      }
    }
  }
  detail::assemble(spec, bp, buf);
  if (soften) {
    // Linear plus quadratic slack cost: the quadratic part keeps the problem
    // strongly convex in the slack, which the operator-splitting solver needs
    // to converge at a degenerate vertex.
    for (Eigen::Index i = 0; i < bp.n_slack; ++i) {
      bp.q_rest[bp.slack_begin + i] = bp.penalty;
      bp.qp.P(bp.slack_begin + i, bp.slack_begin + i) += bp.penalty;
    }
  }
  refresh(bp, spec, x0, vbar);
  return bp;
}

inline BuiltProblem build_backup(const ControlSpec& spec, const Vector& x0, const SvcUncertaintySet& set,
                                 const Vector& vbar = Vector(), double penalty = -1.0) {
  return build_ddro(spec, x0, set, vbar, DdroEncoding::kCondensed, /*soften=*/true, penalty);
}

struct PolicyResult {
  PolicyDecision decision;
  SolveStatus status = SolveStatus::kMaxIterations;
  double objective = 0.0;
  Eigen::Index iterations = 0;
  double max_slack = 0.0;
  double slack_sum = 0.0;
};

namespace detail {

inline PolicyResult extract_policy(const BuiltProblem& bp, const QpSolution& sol) {
  PolicyResult res;
  res.status = sol.status;
  res.iterations = sol.iterations;
  res.objective = sol.objective + bp.constant;
  res.decision.h = sol.z.head(bp.n_h);
  res.decision.M = Matrix::Zero(bp.H * bp.n_u, bp.H * bp.n_w);
  for (Eigen::Index i = 0; i < bp.n_m; ++i) {
    const auto [r, c] = bp.m_entries[static_cast<size_t>(i)];
    res.decision.M(r, c) = sol.z[bp.n_h + i];
  }
  if (bp.n_slack > 0 && sol.z.size() >= bp.slack_begin + bp.n_slack) {
    Vector s = sol.z.segment(bp.slack_begin, bp.n_slack).cwiseMax(0.0);
    res.max_slack = s.maxCoeff();
    res.slack_sum = s.sum();
    const Vector sl = sol.z.segment(bp.slack_begin, bp.n_slack);
    res.objective -= bp.penalty * (sl.sum() + 0.5 * sl.squaredNorm());
  }
  return res;
}

}  // namespace detail

inline PolicyResult solve_policy(const BuiltProblem& bp, const SolverSettings& settings = SolverSettings()) {
  QpSolution sol = solve_qp(bp.qp, settings);
  return detail::extract_policy(bp, sol);
}

// Holds the factorized QP so successive receding-horizon steps, which only
// change q and the bounds, skip the setup cost.
class PolicySolver {
 public:
  PolicySolver(const BuiltProblem& bp, const SolverSettings& settings = SolverSettings()) {
    solver_.setup(bp.qp.P, bp.qp.A, settings);
  }

  PolicyResult solve(const BuiltProblem& bp) {
    return detail::extract_policy(bp, solver_.solve(bp.qp.q, bp.qp.lower, bp.qp.upper));
  }

 private:
  QpSolver solver_;
};

// Support function sup{a' w : f(w) <= radius} by direct LP over the
// auxiliary-variable polytope; reference oracle for the dual encodings.
inline double support_lp(const SvcUncertaintySet& set, const Vector& a,
                         SolverSettings settings = SolverSettings()) {
  const Eigen::Index ns = set.sv_points.rows(), d = set.dim();
  const Eigen::Index n = d + ns * d;
  Vector c = Vector::Zero(n);
  c.head(d) = a;
  Matrix A = Matrix::Zero(2 * ns * d + 1, n);
  Vector lower(2 * ns * d + 1), upper = Vector::Constant(2 * ns * d + 1, kInf);
  Matrix QW = set.sv_points * set.Q.transpose();
  for (Eigen::Index i = 0; i < ns; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) {
      const Eigen::Index r1 = 2 * (i * d + k), r2 = r1 + 1;
      A(r1, d + i * d + k) = 1.0;
      A.row(r1).head(d) -= set.Q.row(k);
      lower[r1] = -QW(i, k);
      A(r2, d + i * d + k) = 1.0;
      A.row(r2).head(d) += set.Q.row(k);
      lower[r2] = QW(i, k);
    }
  }
  const Eigen::Index last = 2 * ns * d;
  for (Eigen::Index i = 0; i < ns; ++i) A.row(last).segment(d + i * d, d).setConstant(-set.alphas[i]);
  lower[last] = -set.radius;
  settings.abs_tol = std::min(settings.abs_tol, 1e-9);
  settings.rel_tol = std::min(settings.rel_tol, 1e-9);
  QpSolution sol = solve_lp(c, A, lower, upper, settings);
  if (sol.status != SolveStatus::kOptimal) {
    throw std::runtime_error(std::string("support_lp: ") + to_string(sol.status));
  }
  return sol.objective;
}

// Same value through the condensed conjugate dual (minimization).
inline double support_dual_condensed(const SvcUncertaintySet& set, const Vector& a,
                                     SolverSettings settings = SolverSettings()) {
  detail::SetGeometry geo = detail::set_geometry(set);
  const Eigen::Index ns = set.sv_points.rows(), d = set.dim();
  Vector atil = geo.Qinv * a;
  Vector c = Vector::Zero(1 + d);
  c[0] = -set.radius;
  c.tail(d).setConstant(-1.0);
  Matrix A = Matrix::Zero(ns * d + 2 * d + 1, 1 + d);
  Vector lower(A.rows()), upper = Vector::Constant(A.rows(), kInf);
  Eigen::Index r = 0;
  for (Eigen::Index k = 0; k < d; ++k) {
    for (Eigen::Index i = 0; i < ns; ++i) {
      A(r, 1 + k) = 1.0;
      A(r, 0) = geo.Gk(i, k);
      lower[r++] = geo.C(i, k) * atil[k];
    }
    A(r, 0) = 1.0;
    lower[r++] = atil[k];
    A(r, 0) = 1.0;
    lower[r++] = -atil[k];
  }
  A(r, 0) = 1.0;
  lower[r] = 0.0;
  settings.abs_tol = std::min(settings.abs_tol, 1e-9);
  settings.rel_tol = std::min(settings.rel_tol, 1e-9);
  QpSolution sol = solve_lp(c, A, lower, upper, settings);
  if (sol.status != SolveStatus::kOptimal) {
    throw std::runtime_error(std::string("support_dual_condensed: ") + to_string(sol.status));
  }
  return -sol.objective;
}

// Same value through the explicit per-SV dual pairs (mu, eta).
inline double support_dual_per_sv(const SvcUncertaintySet& set, const Vector& a,
                                  SolverSettings settings = SolverSettings()) {
  const Eigen::Index ns = set.sv_points.rows(), d = set.dim();
  Matrix QW = set.sv_points * set.Q.transpose();
  const Eigen::Index n = 1 + 2 * ns * d;
  Vector c = Vector::Zero(n);
  c[0] = -set.radius;
  for (Eigen::Index i = 0; i < ns; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) {
      c[1 + i * d + k] = -QW(i, k);
      c[1 + ns * d + i * d + k] = QW(i, k);
    }
  }
  const Eigen::Index m = d + ns * d + n;
  Matrix A = Matrix::Zero(m, n);
  Vector lower(m), upper(m);
  Eigen::Index r = 0;
  for (Eigen::Index l = 0; l < d; ++l) {
    for (Eigen::Index i = 0; i < ns; ++i) {
      for (Eigen::Index k = 0; k < d; ++k) {
        A(r, 1 + i * d + k) = set.Q(k, l);
        A(r, 1 + ns * d + i * d + k) = -set.Q(k, l);
      }
    }
    lower[r] = upper[r] = a[l];
    ++r;
  }
  for (Eigen::Index i = 0; i < ns; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) {
      A(r, 1 + i * d + k) = 1.0;
      A(r, 1 + ns * d + i * d + k) = 1.0;
      A(r, 0) = -set.alphas[i];
      lower[r] = upper[r] = 0.0;
      ++r;
    }
  }
  for (Eigen::Index v = 0; v < n; ++v) {
    A(r, v) = 1.0;
    lower[r] = 0.0;
    upper[r] = kInf;
    ++r;
  }
  settings.abs_tol = std::min(settings.abs_tol, 1e-9);
  settings.rel_tol = std::min(settings.rel_tol, 1e-9);
  QpSolution sol = solve_lp(c, A, lower, upper, settings);
  if (sol.status != SolveStatus::kOptimal) {
    throw std::runtime_error(std::string("support_dual_per_sv: ") + to_string(sol.status));
  }
  return -sol.objective;
}

namespace detail {

// Stage-row pieces shared by all worst-case checks.
struct RowPieces {
  Vector aphi;  // M' rvec: coefficient on phi_c
  Vector aw;
  double base;  // F (x_free + Bu h) at stage t, row j
  double rhs;
};

inline std::vector<RowPieces> row_pieces(const ControlSpec& spec, const Vector& x0, const PolicyDecision& dec,
                                         const Vector& vbar) {
  Stacked s = stack(spec);
  Vector x_free = s.pm.Abold * x0;
  if (vbar.size() > 0) x_free += s.pm.Bv_bold * vbar;
  std::vector<RowPieces> rows;
  const Eigen::Index nx = spec.model.n_x();
  for (Eigen::Index t = 0; t < spec.H; ++t) {
    const auto& sc = spec.state_constraints[static_cast<size_t>(t)];
    for (Eigen::Index j = 0; j < sc.F.rows(); ++j) {
      RowPieces rp;
      Vector rvec = stage_rvec(s, spec, t, j);
      rp.aphi = dec.M.transpose() * rvec;
      rp.aw = stage_awvec(s, spec, t, j);
      rp.base = sc.F.row(j).dot(x_free.segment(t * nx, nx)) + rvec.dot(dec.h);
      rp.rhs = sc.f[j];
      rows.push_back(std::move(rp));
    }
  }
  return rows;
}

}  // namespace detail

// Worst-case state-constraint violation of a fixed policy over the lifted
// set, by direct LP maximization per row (independent of the dual encoding).
inline double worst_case_violation(const ControlSpec& spec, const Vector& x0, const PolicyDecision& dec,
                                   const SvcUncertaintySet& set, const Vector& vbar = Vector()) {
  double worst = -kInf;
  for (const auto& rp : detail::row_pieces(spec, x0, dec, vbar)) {
    Vector a(set.dim());
    a.head(rp.aphi.size()) = rp.aphi;
    a.tail(rp.aw.size()) = rp.aw;
    const double sup = a.cwiseAbs().maxCoeff() == 0.0 ? 0.0 : support_lp(set, a);
    worst = std::max(worst, rp.base + sup - rp.rhs);
  }
  return worst;
}

// Worst case over the product box induced by a hyper-rectangle on w.
inline double worst_case_violation(const ControlSpec& spec, const Vector& x0, const PolicyDecision& dec,
                                   const RectSet& rect, const Vector& vbar = Vector()) {
  const Eigen::Index d = spec.H * spec.model.n_w();
  Vector philo(d), phihi(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    philo[k] = saturate(spec.saturation, rect.gamma_min[k]) - spec.phi_mean[k];
    phihi[k] = saturate(spec.saturation, rect.gamma_max[k]) - spec.phi_mean[k];
  }
  double worst = -kInf;
  for (const auto& rp : detail::row_pieces(spec, x0, dec, vbar)) {
    double sup = rp.base;
    for (Eigen::Index k = 0; k < d; ++k) {
      sup += std::max(rp.aphi[k] * philo[k], rp.aphi[k] * phihi[k]);
      sup += std::max(rp.aw[k] * rect.gamma_min[k], rp.aw[k] * rect.gamma_max[k]);
    }
    worst = std::max(worst, sup - rp.rhs);
  }
  return worst;
}

// Worst case over a finite scenario set (hard scenario constraints).
inline double worst_case_violation(const ControlSpec& spec, const Vector& x0, const PolicyDecision& dec,
                                   const LiftedScenarioSet& scenarios, const Vector& vbar = Vector()) {
  const Eigen::Index d = spec.H * spec.model.n_w();
  double worst = -kInf;
  for (const auto& rp : detail::row_pieces(spec, x0, dec, vbar)) {
    for (Eigen::Index i = 0; i < scenarios.count(); ++i) {
      const double lhs = rp.base + rp.aphi.dot(scenarios.data.row(i).head(d).transpose()) +
                         rp.aw.dot(scenarios.data.row(i).tail(d).transpose());
      worst = std::max(worst, lhs - rp.rhs);
    }
  }
  return worst;
}

// Exact sup of input-constraint violation over the shifted saturation box.
inline double input_violation_sup(const ControlSpec& spec, const PolicyDecision& dec) {
  const Eigen::Index H = spec.H, nu = spec.model.n_u(), mg = spec.G.rows();
  const Eigen::Index d = H * spec.model.n_w();
  double worst = -kInf;
  for (Eigen::Index t = 0; t < H; ++t) {
    for (Eigen::Index r = 0; r < mg; ++r) {
      double lhs = spec.G.row(r).dot(dec.h.segment(t * nu, nu));
      Vector gm = dec.M.middleRows(t * nu, nu).transpose() * spec.G.row(r).transpose();
      for (Eigen::Index k = 0; k < d; ++k) {
        lhs += std::max(gm[k] * (-1.0 - spec.phi_mean[k]), gm[k] * (1.0 - spec.phi_mean[k]));
      }
      worst = std::max(worst, lhs - spec.g[r]);
    }
  }
  return worst;
}

inline nlohmann::json policy_to_json(const PolicyDecision& dec) {
  nlohmann::json j;
  std::vector<std::vector<double>> m;
  for (Eigen::Index i = 0; i < dec.M.rows(); ++i) m.emplace_back(dec.M.row(i).begin(), dec.M.row(i).end());
  j["M"] = m;
  j["h"] = std::vector<double>(dec.h.begin(), dec.h.end());
  return j;
}

inline PolicyDecision policy_from_json(const nlohmann::json& j) {
  PolicyDecision dec;
  const auto& m = j.at("M");
  const auto& h = j.at("h");
  dec.M = Matrix(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(m[0].size()));
  for (size_t i = 0; i < m.size(); ++i) {
    for (size_t c = 0; c < m[i].size(); ++c) dec.M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = m[i][c].get<double>();
  }
  dec.h = Vector(static_cast<Eigen::Index>(h.size()));
  for (size_t i = 0; i < h.size(); ++i) dec.h[static_cast<Eigen::Index>(i)] = h[i].get<double>();
  return dec;
}

}  // namespace ddsmpc

#endif  // DDSMPC_CONTROLLERS_HPP_
