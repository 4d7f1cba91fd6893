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

// One-step estimators of the covariate-averaged projection phi = E_Q[theta*(X)]
// and of the marginal projection psi, with influence-function covariances.
//
// Every estimator reports point = plug_in + correction, where correction is
// the sample mean of the estimated correction term. Influence values are
// stored per record (labeled records first).

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "btshift/core.hpp"
#include "btshift/graph.hpp"
#include "btshift/nuisance.hpp"
#include "btshift/numeric.hpp"
#include "btshift/projection.hpp"

namespace btshift {

struct EstimatorOptions {
  SolverOptions solver;
  double level = 0.95;
  /// When set, influence values are centred at this parameter instead of
  /// the estimate (psi estimators also evaluate Lambda there).
  std::optional<StrengthVector> truth;
  /// Marginal win probabilities (k < l) replacing the sample average in psi
  /// influence values; used together with `truth`.
  std::optional<Vector> truth_marginal;
};

/// Correction vector in the (K-1)^2 layout. Only the two slots of the
/// observed pair are nonzero: +(y - m_a)/pi_a at (k,l) and the negative at
/// (l,k), for a = (k,l), k < l (slots of the reference player are absent).
inline Vector tau(int players, Pair a, double y, const WinProbVector& m, const Vector& pi) {
  const int j = pair_to_index(a, players);
  if (!(pi[j] > 0.0)) {
    throw Error(ErrorKind::positivity, "observed pair " + to_string(a) +
                                           " has zero estimated propensity");
  }
  Vector t = Vector::Zero((players - 1) * (players - 1));
  const double r = (y - m.free()[j]) / pi[j];
  if (a.first >= 2) t[full_slot(a.first, a.second, players)] = r;
  t[full_slot(a.second, a.first, players)] = -r;
  return t;
}

inline std::vector<Interval> wald_ci(const StrengthVector& point, const Matrix& covariance,
                                     double level = 0.95) {
  const double z = normal_quantile(0.5 + 0.5 * level);
  std::vector<Interval> out;
  for (Eigen::Index k = 0; k < point.size(); ++k) {
    const double half = z * std::sqrt(std::max(covariance(k, k), 0.0));
    out.push_back({point[k] - half, point[k] + half});
  }
  return out;
}

namespace detail {

inline Vector pair_row(const Matrix& table, std::size_t i) {
  return table.row(static_cast<Eigen::Index>(i)).transpose();
}

/// m-hat at record i as a win-probability vector; pairs absent from the data
/// get the placeholder 0.5 and must carry zero weight wherever used.
inline WinProbVector winprob_at(const NuisanceBundle& b, std::size_t i) {
  Vector v = pair_row(b.outcome, i);
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (std::isnan(v[j])) v[j] = 0.5;
  }
  return WinProbVector(b.players, v);
}

inline void check_bundle(const ComparisonDataset& data, const NuisanceBundle& b) {
  if (b.players != data.players || b.n != data.n() || b.m != data.m()) {
    throw Error(ErrorKind::invalid_argument, "nuisance bundle does not match the dataset");
  }
}

inline void require_rho_pairs_observed(const NuisanceBundle& b, const Vector& rho) {
  for (int j = 0; j < rho.size(); ++j) {
    if (rho[j] > 0.0 && !b.observed[static_cast<std::size_t>(j)]) {
      throw Error(ErrorKind::identification,
                  "pair " + to_string(index_to_pair(j, b.players)) +
                      " is never compared; the projection estimands need every pair with "
                      "positive target weight observed (use a conditional-BT regime instead)");
    }
  }
}

inline void require_fusion(const ComparisonDataset& data, const NuisanceBundle& b) {
  if (!data.fusion() || data.m() == 0) {
    throw Error(ErrorKind::invalid_argument, "fusion estimators need an unlabeled target block");
  }
  if (!b.has_ratio()) throw Error(ErrorKind::invalid_argument, "nuisance bundle has no density ratio");
}

inline void track(Diagnostics& d, int iterations) {
  d.max_solver_iterations = std::max(d.max_solver_iterations, iterations);
  d.total_solver_iterations += iterations;
}

/// Influence values at the estimates are centred; at a supplied truth they
/// are left as evaluated.
inline std::function<void(Matrix&, const StrengthVector&)> centre_unless_truth(const EstimatorOptions& opts) {
  const bool at_truth = opts.truth.has_value();
  return [at_truth](Matrix& m, const StrengthVector&) {
    if (!at_truth) m.rowwise() -= m.colwise().mean();
  };
}

inline EstimateReport finish(Estimand estimand, Regime regime, bool fusion,
                             const StrengthVector& plug_in, const Matrix& corrections,
                             Matrix influence, const NuisanceBundle& b, Diagnostics diag,
                             const EstimatorOptions& opts,
                             const std::function<void(Matrix&, const StrengthVector&)>& centre) {
  EstimateReport r;
  r.estimand = estimand;
  r.regime = regime;
  r.fusion = fusion;
  r.plug_in = plug_in;
  r.correction = corrections.colwise().mean().transpose();
  r.point = r.plug_in + r.correction;
  centre(influence, opts.truth ? *opts.truth : r.point);
  for (Eigen::Index i = 0; i < influence.rows(); ++i) {
    if (!influence.row(i).allFinite()) {
      throw Error(ErrorKind::numerical, "non-finite influence value at record " + std::to_string(i));
    }
  }
  r.covariance = row_moments(influence).second / static_cast<double>(influence.rows());
  r.level = opts.level;
  r.wald = wald_ci(r.point, r.covariance, opts.level);
  r.influence = {regime, std::move(influence)};
  diag.clipped_outcome = b.diagnostics.clipped_outcome;
  diag.clipped_propensity = b.diagnostics.clipped_propensity;
  diag.clipped_ratio = b.diagnostics.clipped_ratio;
  diag.fold_seeds = b.diagnostics.fold_seeds;
  diag.records = static_cast<std::size_t>(r.influence.values.rows());
  r.diagnostics = std::move(diag);
  return r;
}

}  // namespace detail

inline EstimateReport one_step_phi(const ComparisonDataset& data, const NuisanceBundle& b,
                                   const Vector& rho, const EstimatorOptions& opts = {}) {
  detail::check_bundle(data, b);
  detail::require_rho_pairs_observed(b, rho);
  const int K = data.players;
  const auto n = static_cast<Eigen::Index>(data.n());
  Matrix theta(n, K - 1), corr(n, K - 1);
  Diagnostics diag;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& rec = data.labeled[static_cast<std::size_t>(i)];
    const WinProbVector m = detail::winprob_at(b, static_cast<std::size_t>(i));
    const auto sol = solve_projection_detailed(m, rho, opts.solver);
    detail::track(diag, sol.iterations);
    theta.row(i) = sol.theta.transpose();
    const Vector t = tau(K, rec.pair, rec.y, m, detail::pair_row(b.propensity, static_cast<std::size_t>(i)));
    corr.row(i) = (-(lambda_matrix(sol.theta, rho) * t)).transpose();
  }
  const StrengthVector plug = theta.colwise().mean().transpose();
  return detail::finish(Estimand::phi, Regime::no_shift, false, plug, corr, corr + theta, b, diag, opts,
                        [](Matrix& D, const StrengthVector& c) { D.rowwise() -= c.transpose(); });
}

inline EstimateReport one_step_psi(const ComparisonDataset& data, const NuisanceBundle& b,
                                   const Vector& rho, const EstimatorOptions& opts = {}) {
  detail::check_bundle(data, b);
  detail::require_rho_pairs_observed(b, rho);
  const int K = data.players;
  const auto n = static_cast<Eigen::Index>(data.n());
  Vector mbar = Vector::Zero(pair_count(K));
  for (Eigen::Index i = 0; i < n; ++i) mbar += detail::winprob_at(b, static_cast<std::size_t>(i)).free();
  mbar /= static_cast<double>(n);
  Diagnostics diag;
  const auto sol = solve_projection_detailed(WinProbVector(K, mbar), rho, opts.solver);
  detail::track(diag, sol.iterations);
  const Vector mbar_eval = opts.truth_marginal ? *opts.truth_marginal : mbar;
  const Matrix Lam = lambda_matrix(opts.truth ? *opts.truth : sol.theta, rho);
  const Matrix Lam_hat = lambda_matrix(sol.theta, rho);
  const Vector mbar_full = WinProbVector(K, mbar).full();
  const Vector mbar_eval_full = WinProbVector(K, mbar_eval).full();
  Matrix corr(n, K - 1), infl(n, K - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& rec = data.labeled[static_cast<std::size_t>(i)];
    const WinProbVector m = detail::winprob_at(b, static_cast<std::size_t>(i));
    const Vector t = tau(K, rec.pair, rec.y, m, detail::pair_row(b.propensity, static_cast<std::size_t>(i)));
    const Vector mf = m.full();
    corr.row(i) = (-(Lam_hat * (t + mf - mbar_full))).transpose();
    infl.row(i) = (-(Lam * (t + mf - mbar_eval_full))).transpose();
  }
  return detail::finish(Estimand::psi, Regime::no_shift, false, sol.theta, corr, infl, b, diag, opts,
                        detail::centre_unless_truth(opts));
}

inline EstimateReport one_step_phi_fusion(const ComparisonDataset& data, const NuisanceBundle& b,
                                          const Vector& rho, const EstimatorOptions& opts = {}) {
  detail::check_bundle(data, b);
  detail::require_fusion(data, b);
  detail::require_rho_pairs_observed(b, rho);
  const int K = data.players;
  const auto n = static_cast<Eigen::Index>(data.n());
  const auto N = static_cast<Eigen::Index>(data.total());
  const double sbar = static_cast<double>(n) / static_cast<double>(N);
  Matrix theta(N, K - 1), corr = Matrix::Zero(N, K - 1);
  Diagnostics diag;
  for (Eigen::Index i = 0; i < N; ++i) {
    const WinProbVector m = detail::winprob_at(b, static_cast<std::size_t>(i));
    const auto sol = solve_projection_detailed(m, rho, opts.solver);
    detail::track(diag, sol.iterations);
    theta.row(i) = sol.theta.transpose();
    if (i < n) {
      const auto& rec = data.labeled[static_cast<std::size_t>(i)];
      const Vector t = tau(K, rec.pair, rec.y, m, detail::pair_row(b.propensity, static_cast<std::size_t>(i)));
      corr.row(i) = (-(b.ratio[i] / sbar) * (lambda_matrix(sol.theta, rho) * t)).transpose();
    }
  }
  const StrengthVector plug = theta.bottomRows(N - n).colwise().mean().transpose();
  Matrix infl = corr;
  infl.bottomRows(N - n) = theta.bottomRows(N - n);
  return detail::finish(Estimand::phi, Regime::fusion, true, plug, corr, infl, b, diag, opts,
                        [n, N, sbar](Matrix& D, const StrengthVector& c) {
                          D.bottomRows(N - n) =
                              (D.bottomRows(N - n).rowwise() - c.transpose()) / (1.0 - sbar);
                        });
}

inline EstimateReport one_step_psi_fusion(const ComparisonDataset& data, const NuisanceBundle& b,
                                          const Vector& rho, const EstimatorOptions& opts = {}) {
  detail::check_bundle(data, b);
  detail::require_fusion(data, b);
  detail::require_rho_pairs_observed(b, rho);
  const int K = data.players;
  const auto n = static_cast<Eigen::Index>(data.n());
  const auto N = static_cast<Eigen::Index>(data.total());
  const double sbar = static_cast<double>(n) / static_cast<double>(N);
  Vector mbar = Vector::Zero(pair_count(K));
  for (Eigen::Index i = n; i < N; ++i) mbar += detail::winprob_at(b, static_cast<std::size_t>(i)).free();
  mbar /= static_cast<double>(N - n);
  Diagnostics diag;
  const auto sol = solve_projection_detailed(WinProbVector(K, mbar), rho, opts.solver);
  detail::track(diag, sol.iterations);
  const Vector mbar_eval = opts.truth_marginal ? *opts.truth_marginal : mbar;
  const Matrix Lam = lambda_matrix(opts.truth ? *opts.truth : sol.theta, rho);
  const Matrix Lam_hat = lambda_matrix(sol.theta, rho);
  const Vector mbar_full = WinProbVector(K, mbar).full();
  const Vector mbar_eval_full = WinProbVector(K, mbar_eval).full();
  Matrix corr(N, K - 1), infl(N, K - 1);
  for (Eigen::Index i = 0; i < N; ++i) {
    const WinProbVector m = detail::winprob_at(b, static_cast<std::size_t>(i));
    if (i < n) {
      const auto& rec = data.labeled[static_cast<std::size_t>(i)];
      const Vector t = (b.ratio[i] / sbar) *
                       tau(K, rec.pair, rec.y, m, detail::pair_row(b.propensity, static_cast<std::size_t>(i)));
      corr.row(i) = (-(Lam_hat * t)).transpose();
      infl.row(i) = (-(Lam * t)).transpose();
    } else {
      const Vector mf = m.full();
      corr.row(i) = (-(Lam_hat * (mf - mbar_full)) / (1.0 - sbar)).transpose();
      infl.row(i) = (-(Lam * (mf - mbar_eval_full)) / (1.0 - sbar)).transpose();
    }
  }
  return detail::finish(Estimand::psi, Regime::fusion, true, sol.theta, corr, infl, b, diag, opts,
                        detail::centre_unless_truth(opts));
}

namespace detail {

/// Pointwise strengths and uncentred correction vectors of the
/// conditional-BT regimes, for every record in scope.
struct CondBtPieces {
  Matrix theta;       // rows: records
  Matrix correction;  // Gamma^+ tau-tilde or L^{-1} Gamma*^T v; zero for unlabeled rows
  Diagnostics diag;
};

inline CondBtPieces cond_bt_if_pieces(const ComparisonDataset& data, const NuisanceBundle& b,
                                      const ComparisonMatrix& gamma, Eigen::Index rows) {
  const int K = data.players;
  if (gamma.players() != K) throw Error(ErrorKind::invalid_argument, "Gamma has the wrong player count");
  const GammaPseudoInverse pinv(gamma);
  const auto idx = gamma.pair_indices();
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (!b.observed[static_cast<std::size_t>(idx[j])]) {
      throw Error(ErrorKind::positivity, "pair " + to_string(gamma.pair(static_cast<int>(j))) +
                                             " of the comparison matrix is never observed");
    }
  }
  CondBtPieces out;
  out.theta.resize(rows, K - 1);
  out.correction = Matrix::Zero(rows, K - 1);
  for (Eigen::Index i = 0; i < rows; ++i) {
    Vector lg(gamma.rows());
    for (int j = 0; j < gamma.rows(); ++j) lg[j] = logit(b.outcome(i, idx[static_cast<std::size_t>(j)]));
    out.theta.row(i) = pinv.apply(lg).transpose();
    if (static_cast<std::size_t>(i) < data.n()) {
      const auto& rec = data.labeled[static_cast<std::size_t>(i)];
      const int a = pair_to_index(rec.pair, K);
      for (int j = 0; j < gamma.rows(); ++j) {
        if (idx[static_cast<std::size_t>(j)] != a) continue;
        const double mj = b.outcome(i, a);
        const double pj = b.propensity(i, a);
        if (!(pj > 0.0)) throw Error(ErrorKind::positivity, "zero propensity at record " + std::to_string(i));
        const double tt = (rec.y - mj) / (pj * mj * (1.0 - mj));
        out.correction.row(i) = (pinv.matrix().col(j) * tt).transpose();
      }
    }
  }
  return out;
}

inline CondBtPieces cond_bt_eif_pieces(const ComparisonDataset& data, const NuisanceBundle& b,
                                       Eigen::Index rows, const SolverOptions& solver) {
  const int K = data.players;
  {
    std::vector<Pair> seen;
    for (int j = 0; j < pair_count(K); ++j) {
      if (b.observed[static_cast<std::size_t>(j)]) seen.push_back(index_to_pair(j, K));
    }
    if (!is_identifiable(build_gamma(seen, K))) {
      throw Error(ErrorKind::identification,
                  "the observed comparison graph is disconnected; strengths are not identified");
    }
  }
  const ComparisonMatrix full = build_gamma_full(K);
  const Matrix G = full.matrix();
  CondBtPieces out;
  out.theta.resize(rows, K - 1);
  out.correction = Matrix::Zero(rows, K - 1);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Vector pi = pair_row(b.propensity, static_cast<std::size_t>(i));
    ProjectionResult sol;
    try {
      sol = solve_projection_detailed(winprob_at(b, static_cast<std::size_t>(i)), pi, solver);
    } catch (const Error& e) {
      throw Error(e.kind(), std::string(e.what()) + " (record " + std::to_string(i) + ")");
    }
    track(out.diag, sol.iterations);
    out.theta.row(i) = sol.theta.transpose();
    if (static_cast<std::size_t>(i) < data.n()) {
      const auto& rec = data.labeled[static_cast<std::size_t>(i)];
      const int a = pair_to_index(rec.pair, K);
      if (!(pi[a] > 0.0)) continue;
      const WinProbVector mbt(K, bt_free_probs(sol.theta));
      const WeightedLaplacian lap = weighted_laplacian(full, mbt, pi);
      const Vector g = G.row(a).transpose() * (rec.y - mbt.free()[a]);
      try {
        out.correction.row(i) = laplacian_solve(lap, g).transpose();
      } catch (const Error& e) {
        throw Error(e.kind(), std::string(e.what()) + " (record " + std::to_string(i) + ")");
      }
    }
  }
  return out;
}

inline EstimateReport cond_bt_phi_finish(const ComparisonDataset& data, const NuisanceBundle& b,
                                         CondBtPieces pieces, bool fusion, Regime regime,
                                         const EstimatorOptions& opts) {
  const auto n = static_cast<Eigen::Index>(data.n());
  if (!fusion) {
    const StrengthVector plug = pieces.theta.colwise().mean().transpose();
    return finish(Estimand::phi, regime, false, plug, pieces.correction,
                  pieces.correction + pieces.theta, b, pieces.diag, opts,
                  [](Matrix& D, const StrengthVector& c) { D.rowwise() -= c.transpose(); });
  }
  const auto N = static_cast<Eigen::Index>(data.total());
  const double sbar = static_cast<double>(n) / static_cast<double>(N);
  for (Eigen::Index i = 0; i < n; ++i) pieces.correction.row(i) *= b.ratio[i] / sbar;
  const StrengthVector plug = pieces.theta.bottomRows(N - n).colwise().mean().transpose();
  Matrix infl = pieces.correction;
  infl.bottomRows(N - n) = pieces.theta.bottomRows(N - n);
  return finish(Estimand::phi, regime, true, plug, pieces.correction, infl, b, pieces.diag, opts,
                [n, N, sbar](Matrix& D, const StrengthVector& c) {
                  D.bottomRows(N - n) = (D.bottomRows(N - n).rowwise() - c.transpose()) / (1.0 - sbar);
                });
}

inline Eigen::Index cond_bt_rows(const ComparisonDataset& data, const NuisanceBundle& b, bool fusion) {
  if (fusion) {
    require_fusion(data, b);
    return static_cast<Eigen::Index>(data.total());
  }
  return static_cast<Eigen::Index>(data.n());
}

}  // namespace detail

/// Influence-function estimator under the conditional BT model using the
/// pairs of `gamma`; records of other pairs add no correction.
inline EstimateReport cond_bt_if_phi(const ComparisonDataset& data, const NuisanceBundle& b,
                                     const ComparisonMatrix& gamma, const EstimatorOptions& opts = {},
                                     bool fusion = false) {
  detail::check_bundle(data, b);
  const auto rows = detail::cond_bt_rows(data, b, fusion);
  return detail::cond_bt_phi_finish(data, b, detail::cond_bt_if_pieces(data, b, gamma, rows), fusion,
                                    Regime::cond_bt_if, opts);
}

/// Efficient estimator under the conditional BT model over all observed pairs.
inline EstimateReport cond_bt_eif_phi(const ComparisonDataset& data, const NuisanceBundle& b,
                                      const EstimatorOptions& opts = {}, bool fusion = false) {
  detail::check_bundle(data, b);
  const auto rows = detail::cond_bt_rows(data, b, fusion);
  return detail::cond_bt_phi_finish(data, b, detail::cond_bt_eif_pieces(data, b, rows, opts.solver),
                                    fusion, Regime::cond_bt_eif, opts);
}

/// psi under the conditional BT model. `gamma` selects the influence-function
/// route; without it (efficient = true) the Laplacian route is used.
inline EstimateReport cond_bt_psi(const ComparisonDataset& data, const NuisanceBundle& b,
                                  const std::optional<ComparisonMatrix>& gamma, const Vector& rho,
                                  const EstimatorOptions& opts = {}, bool fusion = false,
                                  bool efficient = true) {
  detail::check_bundle(data, b);
  const int K = data.players;
  const auto rows = detail::cond_bt_rows(data, b, fusion);
  if (!efficient && !gamma) {
    throw Error(ErrorKind::invalid_argument, "the influence-function route needs a comparison matrix");
  }
  detail::CondBtPieces pieces = efficient ? detail::cond_bt_eif_pieces(data, b, rows, opts.solver)
                                          : detail::cond_bt_if_pieces(data, b, *gamma, rows);
  const auto n = static_cast<Eigen::Index>(data.n());
  const Eigen::Index first = fusion ? n : 0;
  Matrix mfree(rows, pair_count(K));
  for (Eigen::Index i = 0; i < rows; ++i) {
    mfree.row(i) = bt_free_probs(pieces.theta.row(i).transpose()).transpose();
  }
  const Vector mbar = mfree.bottomRows(rows - first).colwise().mean().transpose();
  const auto sol = solve_projection_detailed(WinProbVector(K, mbar), rho, opts.solver);
  detail::track(pieces.diag, sol.iterations);
  const Vector mbar_eval = opts.truth_marginal ? *opts.truth_marginal : mbar;
  const Matrix Lam = lambda_matrix(opts.truth ? *opts.truth : sol.theta, rho);
  const Matrix Lam_hat = lambda_matrix(sol.theta, rho);
  const Vector mbar_full = WinProbVector(K, mbar).full();
  const Vector mbar_eval_full = WinProbVector(K, mbar_eval).full();
  const double sbar = fusion ? static_cast<double>(n) / static_cast<double>(rows) : 1.0;
  Matrix corr(rows, K - 1), infl(rows, K - 1);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const StrengthVector th = pieces.theta.row(i).transpose();
    const Vector mf = WinProbVector(K, mfree.row(i).transpose()).full();
    Vector lab = Vector::Zero((K - 1) * (K - 1));
    if (i < n) {
      const double wt = fusion ? b.ratio[i] / sbar : 1.0;
      lab = wt * (dm_dtheta(th) * pieces.correction.row(i).transpose());
    }
    if (!fusion) {
      corr.row(i) = (-(Lam_hat * (lab + mf - mbar_full))).transpose();
      infl.row(i) = (-(Lam * (lab + mf - mbar_eval_full))).transpose();
    } else if (i < n) {
      corr.row(i) = (-(Lam_hat * lab)).transpose();
      infl.row(i) = (-(Lam * lab)).transpose();
    } else {
      corr.row(i) = (-(Lam_hat * (mf - mbar_full)) / (1.0 - sbar)).transpose();
      infl.row(i) = (-(Lam * (mf - mbar_eval_full)) / (1.0 - sbar)).transpose();
    }
  }
  return detail::finish(Estimand::psi, efficient ? Regime::cond_bt_eif : Regime::cond_bt_if, fusion,
                        sol.theta, corr, infl, b, pieces.diag, opts,
                        detail::centre_unless_truth(opts));
}

/// phi under a density ratio known up to scale: labeled records are weighted
/// by w(X_i) / mean(w).
inline EstimateReport known_ratio_phi(const ComparisonDataset& data, const Vector& w,
                                      const NuisanceBundle& b, const Vector& rho,
                                      const EstimatorOptions& opts = {}) {
  detail::check_bundle(data, b);
  detail::require_rho_pairs_observed(b, rho);
  const int K = data.players;
  const auto n = static_cast<Eigen::Index>(data.n());
  if (w.size() != n) throw Error(ErrorKind::invalid_argument, "one weight per labeled record is required");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(w[i]) || w[i] < 0.0) {
      throw Error(ErrorKind::invalid_argument, "density-ratio weights must be finite and >= 0");
    }
  }
  const double wmean = w.mean();
  if (!(wmean > 0.0)) throw Error(ErrorKind::invalid_argument, "density-ratio weights are all zero");
  const Vector wn = w / wmean;
  Matrix theta(n, K - 1), corr(n, K - 1);
  Diagnostics diag;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& rec = data.labeled[static_cast<std::size_t>(i)];
    const WinProbVector m = detail::winprob_at(b, static_cast<std::size_t>(i));
    const auto sol = solve_projection_detailed(m, rho, opts.solver);
    detail::track(diag, sol.iterations);
    theta.row(i) = wn[i] * sol.theta.transpose();
    const Vector t = tau(K, rec.pair, rec.y, m, detail::pair_row(b.propensity, static_cast<std::size_t>(i)));
    corr.row(i) = (-wn[i] * (lambda_matrix(sol.theta, rho) * t)).transpose();
  }
  const StrengthVector plug = theta.colwise().mean().transpose();
  return detail::finish(Estimand::phi, Regime::known_ratio, false, plug, corr, corr + theta, b, diag, opts,
                        [wn](Matrix& D, const StrengthVector& c) {
                          for (Eigen::Index i = 0; i < D.rows(); ++i) D.row(i) -= wn[i] * c.transpose();
                        });
}

inline EstimateReport known_ratio_phi(const ComparisonDataset& data,
                                      const std::function<double(const std::vector<double>&)>& w,
                                      const NuisanceBundle& b, const Vector& rho,
                                      const EstimatorOptions& opts = {}) {
  Vector wv(static_cast<Eigen::Index>(data.n()));
  for (std::size_t i = 0; i < data.n(); ++i) wv[static_cast<Eigen::Index>(i)] = w(data.labeled[i].x);
  return known_ratio_phi(data, wv, b, rho, opts);
}

}  // namespace btshift
