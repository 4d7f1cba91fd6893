// Copyright 2026 The btshift Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Bradley-Terry estimating equations
//
//   U_{k-1}(theta, m; rho) = sum_{l != k} rho_kl {sigma(theta_k - theta_l) - m_kl},
//
// for k = 2..K, their derivatives, and the pointwise KL projection that
// solves U = 0. Sampling weights rho are passed as one value per unordered
// pair in lexicographic order.

#pragma once

#include <Eigen/Cholesky>

#include <cmath>
#include <string>

#include "btshift/core.hpp"
#include "btshift/numeric.hpp"

namespace btshift {

struct SolverOptions {
  double tol = 1e-10;
  int max_iter = 100;
  bool damping = true;

  void validate() const {
    if (!(tol > 0.0) || max_iter < 1) {
      throw Error(ErrorKind::invalid_argument, "solver needs tol > 0 and max_iter >= 1");
    }
  }
};

struct ProjectionResult {
  StrengthVector theta;
  int iterations = 0;
  double residual = 0.0;
};

namespace detail {

inline double strength(const StrengthVector& theta, int k) {
  return k == 1 ? 0.0 : theta[k - 2];
}

inline void check_dims(const StrengthVector& theta, int players, const Vector& rho) {
  if (theta.size() != players - 1 || rho.size() != pair_count(players)) {
    throw Error(ErrorKind::invalid_argument, "dimension mismatch in estimating equations");
  }
}

}  // namespace detail

inline Vector eval_U(const StrengthVector& theta, const WinProbVector& m, const Vector& rho) {
  const int K = m.players();
  detail::check_dims(theta, K, rho);
  Vector U = Vector::Zero(K - 1);
  for (int j = 0; j < rho.size(); ++j) {
    const Pair p = index_to_pair(j, K);
    const double r = rho[j];
    if (r == 0.0) continue;
    const double s = sigmoid(detail::strength(theta, p.first) - detail::strength(theta, p.second));
    const double resid = s - m.free()[j];  // sigma(theta_k - theta_l) - m_kl
    // The (l,k) term is sigma(theta_l - theta_k) - m_lk = -resid.
    if (p.first >= 2) U[p.first - 2] += r * resid;
    U[p.second - 2] -= r * resid;
  }
  return U;
}

/// All K components including the reference; they sum to zero.
inline Vector eval_U_full(const StrengthVector& theta, const WinProbVector& m, const Vector& rho) {
  const int K = m.players();
  detail::check_dims(theta, K, rho);
  Vector U = Vector::Zero(K);
  for (int j = 0; j < rho.size(); ++j) {
    const Pair p = index_to_pair(j, K);
    const double resid =
        sigmoid(detail::strength(theta, p.first) - detail::strength(theta, p.second)) -
        m.free()[j];
    U[p.first - 1] += rho[j] * resid;
    U[p.second - 1] -= rho[j] * resid;
  }
  return U;
}

inline Matrix jac_U_theta(const StrengthVector& theta, const Vector& rho) {
  const int K = static_cast<int>(theta.size()) + 1;
  detail::check_dims(theta, K, rho);
  Matrix H = Matrix::Zero(K - 1, K - 1);
  for (int j = 0; j < rho.size(); ++j) {
    const Pair p = index_to_pair(j, K);
    const double g =
        rho[j] * sigmoid_slope(detail::strength(theta, p.first) - detail::strength(theta, p.second));
    if (p.first >= 2) {
      H(p.first - 2, p.first - 2) += g;
      H(p.first - 2, p.second - 2) -= g;
      H(p.second - 2, p.first - 2) -= g;
    }
    H(p.second - 2, p.second - 2) += g;
  }
  return H;
}

/// Block-diagonal (K-1) x (K-1)^2 matrix; block k is (-rho_k1, ..., -rho_kK), l != k.
inline Matrix jac_U_m(int players, const Vector& rho) {
  check_players(players);
  if (rho.size() != pair_count(players)) {
    throw Error(ErrorKind::invalid_argument, "rho must have K(K-1)/2 entries");
  }
  Matrix D = Matrix::Zero(players - 1, (players - 1) * (players - 1));
  for (int k = 2; k <= players; ++k) {
    for (int l = 1; l <= players; ++l) {
      if (l == k) continue;
      const double r = rho[pair_to_index({std::min(k, l), std::max(k, l)}, players)];
      D(k - 2, full_slot(k, l, players)) = -r;
    }
  }
  return D;
}

/// Lambda = (dU/dtheta)^{-1} (dU/dm) by Cholesky solve.
inline Matrix lambda_matrix(const StrengthVector& theta, const Vector& rho) {
  const int K = static_cast<int>(theta.size()) + 1;
  Eigen::LLT<Matrix> llt(jac_U_theta(theta, rho));
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::numerical,
                "dU/dtheta is singular; the rho-weighted comparison graph is disconnected");
  }
  return llt.solve(jac_U_m(K, rho));
}

/// Pointwise KL objective sum_{k<l} rho_kl [-m_kl log sigma(d) - m_lk log sigma(-d)],
/// d = theta_k - theta_l; its gradient in theta is U.
inline double kl_objective(const StrengthVector& theta, const WinProbVector& m, const Vector& rho) {
  const int K = m.players();
  detail::check_dims(theta, K, rho);
  double g = 0.0;
  for (int j = 0; j < rho.size(); ++j) {
    const Pair p = index_to_pair(j, K);
    const double d = detail::strength(theta, p.first) - detail::strength(theta, p.second);
    const double mk = m.free()[j];
    // -log sigma(d) = log1p(exp(-d)), computed stably.
    auto nls = [](double t) { return t > 0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t)); };
    g += rho[j] * (mk * nls(d) + (1.0 - mk) * nls(-d));
  }
  return g;
}

inline ProjectionResult solve_projection_detailed(const WinProbVector& m, const Vector& rho,
                                                  const SolverOptions& opts = {},
                                                  const StrengthVector* start = nullptr) {
  opts.validate();
  const int K = m.players();
  if (rho.size() != pair_count(K)) {
    throw Error(ErrorKind::invalid_argument, "rho must have K(K-1)/2 entries");
  }
  if (!detail::weights_connect(K, rho)) {
    throw Error(ErrorKind::identification,
                "the rho-weighted comparison graph is disconnected; projection is not identified");
  }
  ProjectionResult out;
  if (K == 2) {
    out.theta = StrengthVector::Constant(1, logit(1.0 - m.free()[0]));
    out.residual = std::abs(eval_U(out.theta, m, rho)[0]);
    return out;
  }
  StrengthVector theta = start ? *start : StrengthVector::Zero(K - 1);
  Vector U = eval_U(theta, m, rho);
  double res = U.lpNorm<Eigen::Infinity>();
  int it = 0;
  // One damped Newton step; returns false when no decrease was found.
  auto newton = [&](bool allow_halving) {
    Eigen::LLT<Matrix> llt(jac_U_theta(theta, rho));
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorKind::numerical, "singular Jacobian in projection solve");
    }
    const Vector step = llt.solve(U);
    double t = 1.0;
    StrengthVector next = theta - step;
    Vector Unext = eval_U(next, m, rho);
    double rnext = Unext.lpNorm<Eigen::Infinity>();
    while (allow_halving && !(rnext < res) && t > 1e-12) {
      t *= 0.5;
      next = theta - t * step;
      Unext = eval_U(next, m, rho);
      rnext = Unext.lpNorm<Eigen::Infinity>();
    }
    if (!(rnext < res) && (allow_halving || !std::isfinite(rnext))) return false;
    theta = next;
    U = Unext;
    res = rnext;
    return true;
  };
  while (res > opts.tol && it < opts.max_iter) {
    ++it;
    if (!newton(opts.damping)) break;
  }
  if (!(res <= opts.tol)) {
    throw Error(ErrorKind::numerical, "projection solve did not converge after " +
                                          std::to_string(it) +
                                          " iterations; last residual " + std::to_string(res));
  }
  // Polishing: full steps while the residual keeps shrinking, so the
  // result does not depend on the starting point beyond rounding.
  for (int p = 0; p < 3 && res > 0.0; ++p) {
    if (!newton(true)) break;
  }
  out.theta = theta;
  out.iterations = it;
  out.residual = res;
  return out;
}

inline StrengthVector solve_projection(const WinProbVector& m, const Vector& rho,
                                       const SolverOptions& opts = {}) {
  return solve_projection_detailed(m, rho, opts).theta;
}

/// dm/dtheta, (K-1)^2 x (K-1): row of m_kl has sigma'(theta_k - theta_l) in
/// column k (k >= 2) and its negative in column l (l >= 2).
inline Matrix dm_dtheta(const StrengthVector& theta) {
  const int K = static_cast<int>(theta.size()) + 1;
  Matrix D = Matrix::Zero((K - 1) * (K - 1), K - 1);
  for (int k = 2; k <= K; ++k) {
    for (int l = 1; l <= K; ++l) {
      if (l == k) continue;
      const double g = sigmoid_slope(detail::strength(theta, k) - detail::strength(theta, l));
      const int row = full_slot(k, l, K);
      D(row, k - 2) = g;
      if (l >= 2) D(row, l - 2) = -g;
    }
  }
  return D;
}

/// BT-consistent win probabilities sigma(theta_k - theta_l) for k < l.
inline Vector bt_free_probs(const StrengthVector& theta) {
  const int K = static_cast<int>(theta.size()) + 1;
  Vector out(pair_count(K));
  for (int j = 0; j < out.size(); ++j) {
    const Pair p = index_to_pair(j, K);
    out[j] = sigmoid(detail::strength(theta, p.first) - detail::strength(theta, p.second));
  }
  return out;
}

}  // namespace btshift
