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

// Sample-size formulas and the calibration step that turns a trained
// uncertainty set into one with an (epsilon, beta) coverage guarantee.

#ifndef DDSMPC_CALIBRATION_HPP_
#define DDSMPC_CALIBRATION_HPP_

#include <cmath>
#include <stdexcept>
#include <string>

#include "ddsmpc/svc.hpp"

namespace ddsmpc {

struct GuaranteeParams {
  double epsilon = 0.05;  // per-stage violation probability
  double beta = 0.05;     // confidence parameter

  void validate() const {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("GuaranteeParams: epsilon outside (0,1)");
    if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("GuaranteeParams: beta outside (0,1)");
  }
};

inline long long calibration_sample_size(const GuaranteeParams& g) {
  g.validate();
  return static_cast<long long>(std::ceil(std::log(g.beta) / std::log1p(-g.epsilon)));
}

// log of sum_{j=0}^{d-1} C(N,j) eps^j (1-eps)^(N-j), streamed in log space.
inline double log_binomial_tail(long long N, long long d, double eps) {
  const double log_eps = std::log(eps);
  const double log_1me = std::log1p(-eps);
  double log_sum = -kInf;
  double log_term = static_cast<double>(N) * log_1me;  // j = 0
  for (long long j = 0; j < d; ++j) {
    if (j > 0) {
      log_term += std::log(static_cast<double>(N - j + 1)) - std::log(static_cast<double>(j)) + log_eps - log_1me;
    }
    const double hi = std::max(log_sum, log_term);
    log_sum = hi + std::log(std::exp(log_sum - hi) + std::exp(log_term - hi));
  }
  return log_sum;
}

// Smallest N with the d-term binomial tail at or below beta. The tail is
// nonincreasing in N for N >= d, so bisect then refine linearly.
inline long long scenario_sample_size(long long d, const GuaranteeParams& g) {
  g.validate();
  if (d < 1) throw std::invalid_argument("scenario_sample_size: d must be >= 1");
  const double log_beta = std::log(g.beta);
  auto ok = [&](long long N) { return log_binomial_tail(N, d, g.epsilon) <= log_beta; };
  long long hi = std::max<long long>(d, 4);
  while (!ok(hi)) {
    hi *= 2;
    if (hi > 10'000'000) throw std::runtime_error("scenario_sample_size: N exceeds 1e7");
  }
  long long lo = d;
  while (hi - lo > 1) {
    const long long mid = lo + (hi - lo) / 2;
    (ok(mid) ? hi : lo) = mid;
  }
  while (hi > d && ok(hi - 1)) --hi;  // linear refinement guard
  return hi;
}

inline long long df_decision_count(long long H, long long n_u, long long n_w) {
  if (H < 1) throw std::invalid_argument("df_decision_count: H must be >= 1");
  return H * n_u + n_u * n_w * (H - 1) * H / 2;
}

inline long long rect_decision_count(long long H, long long n_w) {
  if (H < 1) throw std::invalid_argument("rect_decision_count: H must be >= 1");
  return 2 * H * n_w;
}

struct CalibrationResult {
  double theta_tilde = 0.0;
  Eigen::Index n_used = 0;
  Eigen::Index max_index = 0;
};

// theta_tilde = max f over the calibration rows; ties keep the first index.
inline CalibrationResult calibrate(const SvcUncertaintySet& set, const Matrix& calib, const GuaranteeParams& g) {
  const long long need = calibration_sample_size(g);
  if (calib.rows() < need) {
    throw std::invalid_argument("calibrate: need at least " + std::to_string(need) + " calibration rows, have " +
                                std::to_string(calib.rows()));
  }
  if (calib.cols() != set.dim()) throw std::invalid_argument("calibrate: dimension mismatch");
  CalibrationResult res;
  res.n_used = calib.rows();
  res.theta_tilde = -kInf;
  for (Eigen::Index i = 0; i < calib.rows(); ++i) {
    const double f = eval_f(set, calib.row(i).transpose());
    if (f > res.theta_tilde) {
      res.theta_tilde = f;
      res.max_index = i;
    }
  }
  return res;
}

inline double empirical_coverage(const SvcUncertaintySet& set, const Matrix& eval) {
  if (eval.rows() < 1) throw std::invalid_argument("empirical_coverage: empty evaluation set");
  Eigen::Index inside = 0;
  for (Eigen::Index i = 0; i < eval.rows(); ++i) {
    if (eval_f(set, eval.row(i).transpose()) <= set.radius) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(eval.rows());
}

}  // namespace ddsmpc

#endif  // DDSMPC_CALIBRATION_HPP_
