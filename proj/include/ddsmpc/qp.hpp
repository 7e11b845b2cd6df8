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

#ifndef DDSMPC_QP_HPP_
#define DDSMPC_QP_HPP_

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ddsmpc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class SolveStatus { kOptimal, kInfeasible, kUnbounded, kMaxIterations };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal: return "optimal";
    case SolveStatus::kInfeasible: return "infeasible";
    case SolveStatus::kUnbounded: return "unbounded";
    default: return "max-iterations";
  }
}

/// Solver configuration. All tolerances must be strictly positive.
struct SolverSettings {
  double abs_tol = 1e-7;
  double rel_tol = 1e-7;
  int max_iterations = 50000;
  double infeas_tol = 1e-9;
  unsigned seed = 0;  // reserved for internal perturbation; unused by the ADMM path

  // Operator-splitting internals.
  double sigma = 1e-6;
  double alpha = 1.6;
  double rho0 = 0.1;
  int check_interval = 25;
  bool polish = true;
  bool warm_start = false;  // reuse the previous solve's iterates
  int scaling_iterations = 10;

  void validate() const {
    if (abs_tol <= 0 || rel_tol <= 0 || infeas_tol <= 0 || sigma <= 0) {
      throw std::invalid_argument("SolverSettings: tolerances must be strictly positive");
    }
    if (max_iterations < 1) throw std::invalid_argument("SolverSettings: max_iterations < 1");
  }
};

/// min 0.5 z'Pz + q'z  s.t.  lower <= Az <= upper.
/// Infinite bounds are encoded as +-inf entries.
struct QuadraticProgram {
  Matrix P;
  Vector q;
  Matrix A;
  Vector lower;
  Vector upper;

  Eigen::Index num_vars() const { return q.size(); }
  Eigen::Index num_constraints() const { return lower.size(); }

  void validate() const {
    const Eigen::Index n = q.size();
    const Eigen::Index m = lower.size();
    if (P.rows() != n || P.cols() != n) throw std::invalid_argument("QuadraticProgram: P dimension mismatch");
    if (m > 0 && (A.rows() != m || A.cols() != n)) {
      throw std::invalid_argument("QuadraticProgram: A dimension mismatch");
    }
    if (upper.size() != m) throw std::invalid_argument("QuadraticProgram: bound dimension mismatch");
    const double scale = std::max(1.0, P.cwiseAbs().maxCoeff());
    if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
      throw std::invalid_argument("QuadraticProgram: P not symmetric");
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!(lower[i] <= upper[i])) throw std::invalid_argument("QuadraticProgram: lower > upper at row " + std::to_string(i));
    }
  }
};

struct QpSolution {
  Vector z;
  Vector dual;  // multipliers for the rows of A
  SolveStatus status = SolveStatus::kMaxIterations;
  double objective = 0.0;
  int iterations = 0;
  double primal_residual = kInf;
  double dual_residual = kInf;
};

struct KktReport {
  double stationarity = 0.0;
  double primal_feasibility = 0.0;
  double complementarity = 0.0;
  double max_residual() const { return std::max({stationarity, primal_feasibility, complementarity}); }
};

/// Operator-splitting (ADMM) solver for dense convex QPs and LPs, with Ruiz
/// equilibration, rho adaptation and active-set polishing. The constraint
/// matrix is held in compressed form so that iterations stay cheap on the
/// tall, very sparse problems produced by the robust counterparts; the KKT
/// system itself is factorized densely (n x n).
///
/// setup() caches the factorization; solve(q, lower, upper) may be called
/// repeatedly with new vectors, which is how the receding-horizon loop avoids
/// refactorizing an unchanged problem structure.
class QpSolver {
 public:
  QpSolver() = default;

  QpSolver(const Matrix& P, const Matrix& A, SolverSettings settings) { setup(P, A, settings); }

  void setup(const Matrix& P, const Matrix& A, SolverSettings settings) {
    settings.validate();
    settings_ = settings;
    n_ = P.rows();
    m_ = A.rows();
    if (P.cols() != n_) throw std::invalid_argument("QpSolver: P must be square");
    if (m_ > 0 && A.cols() != n_) throw std::invalid_argument("QpSolver: A column count mismatch");
    P_ = P;
    A_ = A.sparseView(0.0, 1e-300);
    At_ = SparseMatrix(A_.transpose());
    equilibrate();
    rho_bar_ = settings_.rho0;
    rho_.resize(0);
    rho_dirty_ = true;
  }

  /// Solve with the cached (P, A) and fresh q / bounds.
  QpSolution solve(const Vector& q, const Vector& lower, const Vector& upper) {
    if (q.size() != n_ || lower.size() != m_ || upper.size() != m_) {
      throw std::invalid_argument("QpSolver::solve: vector dimension mismatch");
    }
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (!(lower[i] <= upper[i])) throw std::invalid_argument("QpSolver::solve: lower > upper");
    }
    q_ = q;
    lower_ = lower;
    upper_ = upper;
    qs_ = D_.cwiseProduct(q);
    ls_ = E_.cwiseProduct(lower);
    us_ = E_.cwiseProduct(upper);
    fix_scaled_bounds();
    // Cost normalization: large linear terms (e.g. slack penalties) would
    // otherwise force multipliers of the same magnitude and stall the dual
    // updates. Refactorize only when the scale moves by an order of magnitude.
    const double c_new = 1.0 / std::max(1.0, inf_norm(qs_));
    if (c_new / cost_ > 10.0 || c_new / cost_ < 0.1) {
      cost_ = c_new;
      rho_dirty_ = true;
    }
    // A non-optimal exit leaves a diverging iterate and an adapted rho tuned
    // to it; both poison the next solve (warm-started certificates stop
    // firing), so start that solve from scratch.
    if (reset_next_) {
      warm_xs_.resize(0);
      warm_ys_.resize(0);
      if (rho_bar_ != settings_.rho0) {
        rho_bar_ = settings_.rho0;
        rho_dirty_ = true;
      }
      reset_next_ = false;
    }
    update_rho_vector();
    QpSolution out = run();
    reset_next_ = out.status != SolveStatus::kOptimal;
    return out;
  }

  const SolverSettings& settings() const { return settings_; }

 private:
  static double inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

  void fix_scaled_bounds() {
    // inf * finite scaling stays inf; guard against nan from 0 * inf (cannot
    // occur since scalings are positive, but keep bounds exact).
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (std::isinf(lower_[i])) ls_[i] = lower_[i];
      if (std::isinf(upper_[i])) us_[i] = upper_[i];
    }
  }

  void equilibrate() {
    D_ = Vector::Ones(n_);
    E_ = Vector::Ones(m_);
    Ps_ = P_;
    As_ = A_;
    for (int it = 0; it < settings_.scaling_iterations; ++it) {
      Vector col_norm = Vector::Zero(n_);
      for (Eigen::Index j = 0; j < n_; ++j) {
        double cn = Ps_.col(j).cwiseAbs().maxCoeff();
        for (SparseMatrix::InnerIterator a(As_, j); a; ++a) cn = std::max(cn, std::abs(a.value()));
        col_norm[j] = cn;
      }
      Vector row_norm = Vector::Zero(m_);
      for (Eigen::Index j = 0; j < As_.outerSize(); ++j) {
        for (SparseMatrix::InnerIterator a(As_, j); a; ++a) {
          row_norm[a.row()] = std::max(row_norm[a.row()], std::abs(a.value()));
        }
      }
      // Columns also see the transposed block, so include the row scaling pass.
      Vector dj(n_), ei(m_);
      for (Eigen::Index j = 0; j < n_; ++j) dj[j] = col_norm[j] > 1e-12 ? 1.0 / std::sqrt(col_norm[j]) : 1.0;
      for (Eigen::Index i = 0; i < m_; ++i) ei[i] = row_norm[i] > 1e-12 ? 1.0 / std::sqrt(row_norm[i]) : 1.0;
      Ps_ = dj.asDiagonal() * Ps_ * dj.asDiagonal();
      As_ = ei.asDiagonal() * As_ * dj.asDiagonal();
      D_ = D_.cwiseProduct(dj);
      E_ = E_.cwiseProduct(ei);
    }
    Ats_ = SparseMatrix(As_.transpose());
  }

  void update_rho_vector() {
    Vector fresh(m_);
    for (Eigen::Index i = 0; i < m_; ++i) {
      const bool loose = std::isinf(ls_[i]) && std::isinf(us_[i]);
      const bool equality = !loose && us_[i] - ls_[i] < 1e-12;
      double r = rho_bar_;
      if (equality) r = rho_bar_ * 1e3;
      if (loose) r = rho_bar_ * 1e-6;
      fresh[i] = std::clamp(r, 1e-9, 1e9);
    }
    if (rho_.size() != m_ || (m_ > 0 && (rho_ - fresh).cwiseAbs().maxCoeff() > 0)) {
      rho_ = std::move(fresh);
      rho_dirty_ = true;
    }
  }

  void factorize() {
    Matrix K = cost_ * Ps_;
    K.diagonal().array() += settings_.sigma;
    if (rho_.size() != m_) rho_ = Vector::Constant(m_, rho_bar_);
    if (m_ > 0) {
      SparseMatrix weighted = rho_.asDiagonal() * As_;
      Matrix AtRA = Matrix(Ats_ * weighted);
      K += AtRA;
    }
    kkt_ = K.ldlt();
    if (kkt_.info() != Eigen::Success) throw std::runtime_error("QpSolver: KKT factorization failed");
    rho_dirty_ = false;
  }

  struct Residuals {
    double prim = 0.0, dual = 0.0, prim_rel = kInf, dual_rel = kInf;
  };

  Residuals residuals(const Vector& xs, const Vector& zs, const Vector& ys) const {
    // Unscaled residuals.
    Residuals r;
    Vector x = D_.cwiseProduct(xs);
    Vector Px = P_.selfadjointView<Eigen::Lower>() * x;
    if (m_ > 0) {
      Vector Ax = A_ * x;
      Vector z = E_.cwiseInverse().cwiseProduct(zs);
      Vector y = E_.cwiseProduct(ys) / cost_;
      Vector Aty = At_ * y;
      r.prim = inf_norm(Ax - z);
      r.dual = inf_norm(Px + q_ + Aty);
      const double prim_scale = std::max(inf_norm(Ax), inf_norm(z));
      const double dual_scale = std::max({inf_norm(Px), inf_norm(q_), inf_norm(Aty)});
      r.prim_rel = r.prim / std::max(1e-12, prim_scale);
      r.dual_rel = r.dual / std::max(1e-12, dual_scale);
    } else {
      r.prim = 0.0;
      r.prim_rel = 0.0;
      r.dual = inf_norm(Px + q_);
      r.dual_rel = r.dual / std::max(1e-12, std::max(inf_norm(Px), inf_norm(q_)));
    }
    return r;
  }

  bool converged(const Residuals& r) const {
    const double ep = settings_.abs_tol + settings_.rel_tol * r.prim / std::max(r.prim_rel, 1e-300);
    const double ed = settings_.abs_tol + settings_.rel_tol * r.dual / std::max(r.dual_rel, 1e-300);
    return r.prim <= ep && r.dual <= ed;
  }

  bool primal_infeasible(const Vector& dys) const {
    Vector dy = E_.cwiseProduct(dys);
    const double norm_dy = inf_norm(dy);
    if (norm_dy < 1e-14) return false;
    dy /= norm_dy;
    Vector Atdy = At_ * dy;
    if (inf_norm(Atdy) > settings_.infeas_tol) return false;
    double support = 0.0;
    for (Eigen::Index i = 0; i < m_; ++i) {
      const double yp = std::max(dy[i], 0.0);
      const double ym = std::min(dy[i], 0.0);
      if (std::isinf(upper_[i]) && yp > settings_.infeas_tol) return false;
      if (std::isinf(lower_[i]) && ym < -settings_.infeas_tol) return false;
      if (!std::isinf(upper_[i])) support += upper_[i] * yp;
      if (!std::isinf(lower_[i])) support += lower_[i] * ym;
    }
    return support <= -settings_.infeas_tol;
  }

  bool dual_infeasible(const Vector& dxs) const {
    Vector dx = D_.cwiseProduct(dxs);
    const double norm_dx = inf_norm(dx);
    if (norm_dx < 1e-14) return false;
    dx /= norm_dx;
    if (inf_norm(P_.selfadjointView<Eigen::Lower>() * dx) > settings_.infeas_tol) return false;
    if (q_.dot(dx) >= -settings_.infeas_tol) return false;
    if (m_ > 0) {
      Vector Adx = A_ * dx;
      for (Eigen::Index i = 0; i < m_; ++i) {
        if (!std::isinf(upper_[i]) && Adx[i] > settings_.infeas_tol) return false;
        if (!std::isinf(lower_[i]) && Adx[i] < -settings_.infeas_tol) return false;
      }
    }
    return true;
  }

  // Equality-solve on the detected active set; returns true when the polished
  // point satisfies the KKT conditions at the requested tolerances.
  bool try_polish(Vector& xs, Vector& ys, QpSolution& out) const {
    std::vector<Eigen::Index> act;
    std::vector<int> side;  // -1 lower, +1 upper, 0 equality
    const double act_tol = 1e-8 * std::max(1.0, inf_norm(ys));
    Vector zs = As_ * xs;
    for (Eigen::Index i = 0; i < m_; ++i) {
      const bool eq = !std::isinf(ls_[i]) && !std::isinf(us_[i]) && us_[i] - ls_[i] < 1e-12;
      if (eq) {
        act.push_back(i);
        side.push_back(0);
      } else if (ys[i] < -act_tol || (!std::isinf(ls_[i]) && zs[i] - ls_[i] < 1e-7 * std::max(1.0, std::abs(ls_[i])))) {
        if (std::isinf(ls_[i])) continue;
        act.push_back(i);
        side.push_back(-1);
      } else if (ys[i] > act_tol || (!std::isinf(us_[i]) && us_[i] - zs[i] < 1e-7 * std::max(1.0, std::abs(us_[i])))) {
        if (std::isinf(us_[i])) continue;
        act.push_back(i);
        side.push_back(+1);
      }
    }
    const double delta = 1e-9;
    Vector xp, yp;
    // Working-set correction: degenerate vertices (common in the LP-like
    // rows) can put a wrong-signed multiplier on an inequality, and dropping
    // a row can expose a violated one. Drop every wrong-signed row first;
    // once signs are clean, admit the single most violated row per round.
    for (int attempt = 0; attempt < 120; ++attempt) {
      const Eigen::Index na = static_cast<Eigen::Index>(act.size());
      Matrix K = Matrix::Zero(n_ + na, n_ + na);
      K.topLeftCorner(n_, n_) = cost_ * Ps_;
      K.topLeftCorner(n_, n_).diagonal().array() += delta;
      Matrix Aact(na, n_);
      Vector b(na);
      for (Eigen::Index k = 0; k < na; ++k) {
        const Eigen::Index i = act[static_cast<size_t>(k)];
        Aact.row(k) = Vector(Ats_.col(i)).transpose();
        b[k] = side[static_cast<size_t>(k)] <= 0 ? ls_[i] : us_[i];
      }
      K.bottomLeftCorner(na, n_) = Aact;
      K.topRightCorner(n_, na) = Aact.transpose();
      K.bottomRightCorner(na, na).diagonal().array() -= delta;
      Vector rhs(n_ + na);
      rhs.head(n_) = -cost_ * qs_;
      rhs.tail(na) = b;
      Eigen::LDLT<Matrix> fac(K);
      if (fac.info() != Eigen::Success) return false;
      Vector sol = fac.solve(rhs);
      // Two rounds of iterative refinement against the unregularized system.
      for (int r = 0; r < 2; ++r) {
        Vector resid = rhs;
        resid.head(n_) -= cost_ * (Ps_.selfadjointView<Eigen::Lower>() * sol.head(n_)) + Aact.transpose() * sol.tail(na);
        resid.tail(na) -= Aact * sol.head(n_);
        sol += fac.solve(resid);
      }
      xp = sol.head(n_);
      yp = Vector::Zero(m_);
      for (Eigen::Index k = 0; k < na; ++k) yp[act[static_cast<size_t>(k)]] = sol[n_ + k];
      const double sign_tol = 1e-9 * std::max(1.0, inf_norm(yp));
      const Vector gap_act = (Aact * xp - b).cwiseAbs();
      std::vector<Eigen::Index> keep_act;
      std::vector<int> keep_side;
      std::vector<char> in_set(static_cast<size_t>(m_), 0);
      bool dropped = false;
      for (Eigen::Index k = 0; k < na; ++k) {
        const int s = side[static_cast<size_t>(k)];
        const double y = sol[n_ + k];
        if ((s < 0 && y > sign_tol) || (s > 0 && y < -sign_tol)) {
          dropped = true;
          continue;
        }
        // An active row the equality solve cannot satisfy marks an
        // inconsistent (rank-deficient) working set; drop it as well.
        if (s != 0 && gap_act[k] > 1e-7 * std::max(1.0, std::abs(b[k]))) {
          dropped = true;
          continue;
        }
        keep_act.push_back(act[static_cast<size_t>(k)]);
        keep_side.push_back(s);
        in_set[static_cast<size_t>(act[static_cast<size_t>(k)])] = 1;
      }
      if (!dropped) {
        Vector zc = As_ * xp;
        // Admit the most violated inactive rows, a handful per round;
        // admitting everything at once tends to produce a rank-deficient
        // working set on degenerate vertices.
        std::vector<std::pair<double, Eigen::Index>> cand;
        std::vector<int> cand_side(static_cast<size_t>(m_), 0);
        for (Eigen::Index i = 0; i < m_; ++i) {
          if (in_set[static_cast<size_t>(i)]) continue;
          double gap = 0.0;
          int s = 0;
          if (!std::isinf(ls_[i]) && (ls_[i] - zc[i]) / std::max(1.0, std::abs(ls_[i])) > 1e-9) {
            gap = (ls_[i] - zc[i]) / std::max(1.0, std::abs(ls_[i]));
            s = -1;
          } else if (!std::isinf(us_[i]) && (zc[i] - us_[i]) / std::max(1.0, std::abs(us_[i])) > 1e-9) {
            gap = (zc[i] - us_[i]) / std::max(1.0, std::abs(us_[i]));
            s = +1;
          }
          if (s == 0) continue;
          cand.emplace_back(gap, i);
          cand_side[static_cast<size_t>(i)] = s;
        }
        if (cand.empty()) break;
        const size_t admit = std::min(cand.size(), static_cast<size_t>(8));
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(admit), cand.end(),
                          [](const auto& a, const auto& b) { return a.first > b.first; });
        for (size_t k = 0; k < admit; ++k) {
          keep_act.push_back(cand[k].second);
          keep_side.push_back(cand_side[static_cast<size_t>(cand[k].second)]);
        }
      }
      act = std::move(keep_act);
      side = std::move(keep_side);
    }
    // Reject when the polished point violates inactive rows or carries a
    // multiplier on a row that is not tight (complementary slackness).
    Vector zp = As_ * xp;
    double viol = 0.0;
    const double ctol = 1e-7 * std::max(1.0, inf_norm(yp));
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (!std::isinf(ls_[i])) {
        viol = std::max(viol, (ls_[i] - zp[i]) / std::max(1.0, std::abs(ls_[i])));
        if (yp[i] < -ctol && zp[i] - ls_[i] > 1e-5 * std::max(1.0, std::abs(ls_[i]))) {
          return false;
        }
      } else if (yp[i] < -ctol) {
        return false;
      }
      if (!std::isinf(us_[i])) {
        viol = std::max(viol, (zp[i] - us_[i]) / std::max(1.0, std::abs(us_[i])));
        if (yp[i] > ctol && us_[i] - zp[i] > 1e-5 * std::max(1.0, std::abs(us_[i]))) {
          return false;
        }
      } else if (yp[i] > ctol) {
        return false;
      }
    }
    Residuals r = residuals(xp, zp, yp);
    if (!converged(r) || viol > settings_.abs_tol) return false;
    xs = xp;
    ys = yp;
    finish(out, xs, zp, yp, r, SolveStatus::kOptimal);
    return true;
  }

  void finish(QpSolution& out, const Vector& xs, const Vector& /*zs*/, const Vector& ys, const Residuals& r,
              SolveStatus status) const {
    out.z = D_.cwiseProduct(xs);
    out.dual = E_.cwiseProduct(ys) / cost_;
    out.status = status;
    out.primal_residual = r.prim;
    out.dual_residual = r.dual;
    out.objective = 0.5 * out.z.dot(P_.selfadjointView<Eigen::Lower>() * out.z) + q_.dot(out.z);
  }

  QpSolution run() {
    QpSolution out;
    if (m_ == 0) {
      Matrix K = P_;
      K.diagonal().array() += 1e-9;
      Vector x = K.ldlt().solve(-q_);
      Vector xs = D_.cwiseInverse().cwiseProduct(x);
      Residuals r = residuals(xs, Vector(), Vector());
      Vector dxs = xs;
      if (r.dual > settings_.abs_tol && dual_infeasible(dxs)) {
        out.status = SolveStatus::kUnbounded;
        out.z = x;
        out.dual = Vector();
        return out;
      }
      finish(out, xs, Vector(), Vector(), r, r.dual <= settings_.abs_tol * 10 ? SolveStatus::kOptimal : SolveStatus::kMaxIterations);
      out.iterations = 1;
      return out;
    }
    if (rho_dirty_) factorize();
    Vector xs = Vector::Zero(n_);
    Vector ys = Vector::Zero(m_);
    if (settings_.warm_start && warm_xs_.size() == n_ && warm_ys_.size() == m_) {
      xs = warm_xs_;
      ys = warm_ys_;
    }
    Vector zs = As_ * xs;
    zs = zs.cwiseMax(ls_).cwiseMin(us_);
    auto stash = [&]() {
      if (settings_.warm_start) {
        warm_xs_ = xs;
        warm_ys_ = ys;
      }
    };

    const double a = settings_.alpha;
    int last_adapt = 0;
    int polish_backoff = 4 * settings_.check_interval;
    int next_polish = polish_backoff;
    Vector xs_prev = xs, ys_prev = ys;
    int it = 0;
    for (it = 1; it <= settings_.max_iterations; ++it) {
      Vector rhs = settings_.sigma * xs - cost_ * qs_ + Ats_ * (rho_.cwiseProduct(zs) - ys);
      Vector xt = kkt_.solve(rhs);
      Vector zt = As_ * xt;
      xs = a * xt + (1.0 - a) * xs;
      Vector z_relax = a * zt + (1.0 - a) * zs;
      Vector z_new = (z_relax + rho_.cwiseInverse().cwiseProduct(ys)).cwiseMax(ls_).cwiseMin(us_);
      ys += rho_.cwiseProduct(z_relax - z_new);
      zs = z_new;

      if (it % settings_.check_interval == 0 || it == settings_.max_iterations) {
        Residuals r = residuals(xs, zs, ys);
        if (converged(r)) {
          stash();
          Vector xp = xs, yp = ys;
          if (settings_.polish && try_polish(xp, yp, out)) {
            out.iterations = it;
            return out;
          }
          finish(out, xs, zs, ys, r, SolveStatus::kOptimal);
          out.iterations = it;
          return out;
        }
        // Near-convergence polish escape: accept only if full KKT passes.
        // Each attempt factorizes dense KKT systems, so back off
        // exponentially when attempts keep failing.
        if (settings_.polish && r.prim_rel < 1e-4 && r.dual_rel < 1e-4 &&
            it - last_adapt >= 4 * settings_.check_interval && it >= next_polish) {
          polish_backoff *= 2;
          next_polish = it + polish_backoff;
          Vector xp = xs, yp = ys;
          if (try_polish(xp, yp, out)) {
            stash();
            out.iterations = it;
            return out;
          }
        }
        // Certificate directions accumulated since the previous check: the
        // per-iteration deltas are too noisy to clear the tolerance even on
        // cleanly infeasible problems.
        Vector dys = ys - ys_prev;
        Vector dxs = xs - xs_prev;
        xs_prev = xs;
        ys_prev = ys;
        if (primal_infeasible(dys)) {
          out.status = SolveStatus::kInfeasible;
          out.z = D_.cwiseProduct(xs);
          out.dual = E_.cwiseProduct(dys);
          out.iterations = it;
          return out;
        }
        if (dual_infeasible(dxs)) {
          out.status = SolveStatus::kUnbounded;
          out.z = D_.cwiseProduct(dxs);
          out.dual = Vector();
          out.iterations = it;
          return out;
        }
        // rho adaptation on scaled residual balance.
        if (it - last_adapt >= 8 * settings_.check_interval) {
          const double ratio = std::sqrt(std::max(r.prim_rel, 1e-300) / std::max(r.dual_rel, 1e-300));
          if (ratio > 5.0 || ratio < 0.2) {
            // Damped update: the full ratio overshoots and limit-cycles on
            // LP-like problems with many costless auxiliary variables.
            rho_bar_ = std::clamp(rho_bar_ * std::clamp(ratio, 0.1, 10.0), 1e-6, 1e6);
            update_rho_vector();
            factorize();
            last_adapt = it;
          }
        }
      }
    }
    Residuals r = residuals(xs, zs, ys);
    stash();
    Vector xp = xs, yp = ys;
    if (settings_.polish && try_polish(xp, yp, out)) {
      out.iterations = settings_.max_iterations;
      return out;
    }
    finish(out, xs, zs, ys, r, SolveStatus::kMaxIterations);
    out.iterations = settings_.max_iterations;
    return out;
  }

  SolverSettings settings_;
  Eigen::Index n_ = 0, m_ = 0;
  Matrix P_;
  SparseMatrix A_, At_;
  // Scaled copies.
  Matrix Ps_;
  SparseMatrix As_, Ats_;
  Vector D_, E_;
  Vector q_, lower_, upper_;
  Vector qs_, ls_, us_;
  Vector rho_;
  Vector warm_xs_, warm_ys_;
  bool reset_next_ = false;
  double rho_bar_ = 0.1;
  double cost_ = 1.0;
  bool rho_dirty_ = true;
  Eigen::LDLT<Matrix> kkt_;
};

/// One-shot QP solve.
inline QpSolution solve_qp(const QuadraticProgram& problem, const SolverSettings& settings = {}) {
  problem.validate();
  QpSolver solver(problem.P, problem.A, settings);
  return solver.solve(problem.q, problem.lower, problem.upper);
}

/// Maximize c'z subject to lower <= Az <= upper. The returned objective is
/// the attained maximum; unboundedness is reported as a distinct status.
inline QpSolution solve_lp(const Vector& c, const Matrix& A, const Vector& lower, const Vector& upper,
                           const SolverSettings& settings = {}) {
  QuadraticProgram lp;
  lp.P = Matrix::Zero(c.size(), c.size());
  lp.q = -c;
  lp.A = A;
  lp.lower = lower;
  lp.upper = upper;
  QpSolution sol = solve_qp(lp, settings);
  sol.objective = -sol.objective;
  return sol;
}

/// Residual report for a candidate primal point. Multipliers are estimated by
/// a sign-constrained least-squares fit on the near-active rows.
inline KktReport check_kkt(const QuadraticProgram& problem, const Vector& z) {
  problem.validate();
  if (z.size() != problem.num_vars()) throw std::invalid_argument("check_kkt: dimension mismatch");
  KktReport rep;
  const Eigen::Index m = problem.num_constraints();
  Vector grad = problem.P.selfadjointView<Eigen::Lower>() * z + problem.q;
  if (m == 0) {
    rep.stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
    return rep;
  }
  Vector Az = problem.A * z;
  double viol = 0.0;
  std::vector<Eigen::Index> act;
  std::vector<int> side;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double lo = problem.lower[i], up = problem.upper[i];
    double scale = 1.0;
    if (!std::isinf(lo)) scale = std::max(scale, std::abs(lo));
    if (!std::isinf(up)) scale = std::max(scale, std::abs(up));
    if (!std::isinf(lo)) viol = std::max(viol, (lo - Az[i]) / scale);
    if (!std::isinf(up)) viol = std::max(viol, (Az[i] - up) / scale);
    const double act_tol = 1e-6 * scale;
    const bool at_lo = !std::isinf(lo) && std::abs(Az[i] - lo) <= act_tol;
    const bool at_up = !std::isinf(up) && std::abs(Az[i] - up) <= act_tol;
    if (at_lo || at_up) {
      act.push_back(i);
      side.push_back(at_lo && at_up ? 0 : (at_lo ? -1 : +1));
    }
  }
  rep.primal_feasibility = std::max(viol, 0.0);
  const Eigen::Index na = static_cast<Eigen::Index>(act.size());
  Vector y = Vector::Zero(m);
  if (na > 0) {
    Matrix Aact(na, problem.num_vars());
    for (Eigen::Index k = 0; k < na; ++k) Aact.row(k) = problem.A.row(act[static_cast<size_t>(k)]);
    Vector ya = (Aact * Aact.transpose() + 1e-12 * Matrix::Identity(na, na)).ldlt().solve(Aact * (-grad));
    // Project out wrong-signed multipliers and refit once.
    bool clipped = false;
    for (Eigen::Index k = 0; k < na; ++k) {
      if (side[static_cast<size_t>(k)] == -1 && ya[k] > 0) { ya[k] = 0; clipped = true; }
      if (side[static_cast<size_t>(k)] == +1 && ya[k] < 0) { ya[k] = 0; clipped = true; }
    }
    if (clipped) {
      std::vector<Eigen::Index> keep;
      for (Eigen::Index k = 0; k < na; ++k) {
        if (ya[k] != 0 || side[static_cast<size_t>(k)] == 0) keep.push_back(k);
      }
      if (!keep.empty()) {
        Matrix Ak(static_cast<Eigen::Index>(keep.size()), problem.num_vars());
        for (size_t k = 0; k < keep.size(); ++k) Ak.row(static_cast<Eigen::Index>(k)) = Aact.row(keep[k]);
        Vector yk = (Ak * Ak.transpose() + 1e-12 * Matrix::Identity(Ak.rows(), Ak.rows())).ldlt().solve(Ak * (-grad));
        ya.setZero();
        for (size_t k = 0; k < keep.size(); ++k) {
          Eigen::Index kk = keep[k];
          double v = yk[static_cast<Eigen::Index>(k)];
          if (side[static_cast<size_t>(kk)] == -1 && v > 0) v = 0;
          if (side[static_cast<size_t>(kk)] == +1 && v < 0) v = 0;
          ya[kk] = v;
        }
      } else {
        ya.setZero();
      }
    }
    for (Eigen::Index k = 0; k < na; ++k) y[act[static_cast<size_t>(k)]] = ya[k];
  }
  rep.stationarity = (grad + problem.A.transpose() * y).cwiseAbs().maxCoeff();
  double comp = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double lo = problem.lower[i], up = problem.upper[i];
    if (!std::isinf(lo) && !std::isinf(up) && up - lo < 1e-12) continue;  // equality rows
    const double dist = std::min(std::isinf(lo) ? kInf : Az[i] - lo, std::isinf(up) ? kInf : up - Az[i]);
    if (std::isinf(dist)) {
      comp = std::max(comp, std::abs(y[i]));
    } else {
      comp = std::max(comp, std::abs(y[i] * dist));
    }
  }
  rep.complementarity = comp;
  return rep;
}

}  // namespace ddsmpc

#endif  // DDSMPC_QP_HPP_
