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

// Simulation settings I and II, their true estimands, and a Monte Carlo
// replication harness.
//
// Both settings share the covariate laws
//   labeled (P_X):   X1 ~ N(0, 0.5^2),     X2 ~ Bernoulli(0.5)
//   target  (Q_X):   X1 ~ Uniform(0, 0.5), X2 ~ Bernoulli(0.4)
// Setting I has K = 3 and a win-probability model outside the BT class;
// setting II has K = 5 with conditional BT strengths and five observed pairs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "btshift/core.hpp"
#include "btshift/estimators.hpp"
#include "btshift/graph.hpp"
#include "btshift/nuisance.hpp"
#include "btshift/numeric.hpp"
#include "btshift/projection.hpp"

namespace btshift {

enum class Setting { I, II };
enum class CovariateLaw { labeled, target };
enum class NuisanceMode { flexible, working, oracle };

inline const char* to_string(Setting s) { return s == Setting::I ? "I" : "II"; }
inline const char* to_string(NuisanceMode m) {
  switch (m) {
    case NuisanceMode::flexible: return "flexible";
    case NuisanceMode::working: return "working";
    case NuisanceMode::oracle: return "oracle";
  }
  return "unknown";
}

inline int setting_players(Setting s) { return s == Setting::I ? 3 : 5; }

/// Pairs with positive comparison probability and that probability.
inline std::vector<Pair> setting_pairs(Setting s) {
  if (s == Setting::I) return {{1, 2}, {1, 3}, {2, 3}};
  return {{1, 2}, {2, 3}, {2, 4}, {2, 5}, {3, 5}};
}

/// Pairs of the comparison matrix used by the influence-function regime.
inline std::vector<Pair> setting_if_pairs(Setting s) {
  if (s == Setting::I) return {{1, 2}, {1, 3}};
  return {{1, 2}, {2, 3}, {2, 4}, {2, 5}};
}

/// theta_2..theta_5 of setting II.
inline StrengthVector setting2_theta(double x1, double x2) {
  StrengthVector t(4);
  t << x1 * x2, x1 * x1 + x2, 0.5 * x1 + x2, std::sin(1.5 * (x1 + 0.5 * x2));
  return t;
}

/// True m_kl(x), k < l, over all pairs.
inline Vector true_win_probs(Setting s, double x1, double x2) {
  if (s == Setting::I) {
    Vector m(3);
    m << 0.5 + 0.2 * std::sin(1.5 * (x1 + x2)), sigmoid(0.3 * x1 * (x2 - 1.0)),
        sigmoid(0.2 * x1 * x1 - 0.5);
    return m;
  }
  return bt_free_probs(setting2_theta(x1, x2));
}

/// dQ_X / dP_X; zero outside the target support.
inline double true_density_ratio(double x1, double x2) {
  if (x1 < 0.0 || x1 > 0.5) return 0.0;
  const double sd = 0.5;
  const double p1 = std::exp(-0.5 * x1 * x1 / (sd * sd)) / (sd * std::sqrt(2.0 * M_PI));
  const double q1 = 2.0;
  const double px2 = 0.5;
  const double qx2 = x2 == 1.0 ? 0.4 : 0.6;
  return (q1 * qx2) / (p1 * px2);
}

inline ComparisonDataset gen_setting(Setting s, std::size_t n, std::size_t m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> x1_lab(0.0, 0.5);
  std::bernoulli_distribution x2_lab(0.5);
  std::uniform_real_distribution<double> x1_tgt(0.0, 0.5);
  std::bernoulli_distribution x2_tgt(0.4);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto pairs = setting_pairs(s);
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  ComparisonDataset d;
  d.players = setting_players(s);
  d.dimension = 2;
  d.labeled.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ComparisonRecord r;
    const double x1 = x1_lab(rng);
    const double x2 = x2_lab(rng) ? 1.0 : 0.0;
    r.x = {x1, x2};
    r.pair = pairs[pick(rng)];
    const double p = true_win_probs(s, x1, x2)[pair_to_index(r.pair, d.players)];
    r.y = unif(rng) < p ? 1.0 : 0.0;
    d.labeled.push_back(std::move(r));
  }
  std::vector<std::vector<double>> u;
  u.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double x1 = x1_tgt(rng);
    const double x2 = x2_tgt(rng) ? 1.0 : 0.0;
    u.push_back({x1, x2});
  }
  d.unlabeled = std::move(u);
  return d;
}

inline ComparisonDataset gen_setting1(std::size_t n, std::size_t m, std::uint64_t seed) {
  return gen_setting(Setting::I, n, m, seed);
}
inline ComparisonDataset gen_setting2(std::size_t n, std::size_t m, std::uint64_t seed) {
  return gen_setting(Setting::II, n, m, seed);
}

/// Nuisance bundle holding the true m, pi and density ratio.
inline NuisanceBundle oracle_bundle(Setting s, const ComparisonDataset& d, int folds = 5,
                                    std::uint64_t seed = 0) {
  const int K = d.players;
  const int P = pair_count(K);
  NuisanceBundle b;
  b.players = K;
  b.n = d.n();
  b.m = d.m();
  b.folds = assign_folds(d, folds, seed);
  b.observed.assign(static_cast<std::size_t>(P), false);
  const auto pairs = setting_pairs(s);
  for (const Pair& p : pairs) b.observed[static_cast<std::size_t>(pair_to_index(p, K))] = true;
  const auto N = static_cast<Eigen::Index>(d.total());
  b.outcome = Matrix::Constant(N, P, std::numeric_limits<double>::quiet_NaN());
  b.propensity = Matrix::Zero(N, P);
  b.ratio = d.fusion() && d.m() > 0 ? Vector(N) : Vector();
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto& x = d.covariates(static_cast<std::size_t>(i));
    const Vector mt = true_win_probs(s, x[0], x[1]);
    for (const Pair& p : pairs) {
      const int j = pair_to_index(p, K);
      b.outcome(i, j) = mt[j];
      b.propensity(i, j) = 1.0 / static_cast<double>(pairs.size());
    }
    if (b.ratio.size() > 0) b.ratio[i] = true_density_ratio(x[0], x[1]);
  }
  b.diagnostics.records = d.total();
  return b;
}

/// Target sampling weights defining the estimands: uniform over all pairs.
inline Vector setting_rho(Setting s) {
  const int K = setting_players(s);
  return Vector::Constant(pair_count(K), 1.0 / pair_count(K));
}

struct TrueValues {
  StrengthVector phi;
  StrengthVector psi;
  Vector marginal;  // E[m(X)], k < l
};

/// phi and psi by product quadrature over the chosen covariate law.
inline TrueValues true_values(Setting s, CovariateLaw law = CovariateLaw::target, int order = 64) {
  const QuadratureRule rule = law == CovariateLaw::target ? gauss_legendre_uniform(order, 0.0, 0.5)
                                                          : gauss_hermite_normal(order, 0.0, 0.5);
  const double p1 = law == CovariateLaw::target ? 0.4 : 0.5;
  const int K = setting_players(s);
  const Vector rho = setting_rho(s);
  TrueValues tv;
  tv.phi = StrengthVector::Zero(K - 1);
  tv.marginal = Vector::Zero(pair_count(K));
  for (double x2 : {0.0, 1.0}) {
    const double px2 = x2 == 1.0 ? p1 : 1.0 - p1;
    for (Eigen::Index q = 0; q < rule.nodes.size(); ++q) {
      const double wq = rule.weights[q] * px2;
      const Vector m = true_win_probs(s, rule.nodes[q], x2);
      const StrengthVector th = s == Setting::II ? setting2_theta(rule.nodes[q], x2)
                                                 : solve_projection(WinProbVector(K, m), rho);
      tv.phi += wq * th;
      tv.marginal += wq * m;
    }
  }
  tv.psi = solve_projection(WinProbVector(K, tv.marginal), rho);
  return tv;
}

struct SettingSpec {
  Setting setting = Setting::I;
  std::size_t n = 2000;
  std::size_t m = 2000;
  std::uint64_t seed = 1;
  NuisanceMode mode = NuisanceMode::flexible;
  std::vector<std::string> regimes = {"phi_fusion", "psi_fusion"};
  int folds = 5;
  double level = 0.95;
  /// Flexible arm only: stack logistic_basis with k-nearest neighbours.
  bool stack = false;
  int neighbors = 50;
  unsigned threads = 0;  // 0: hardware concurrency

  void validate() const;
};

inline const std::vector<std::string>& known_regimes() {
  static const std::vector<std::string> names = {
      "phi",         "psi",          "phi_fusion",  "psi_fusion",     "cond_if_phi",
      "cond_eif_phi", "cond_if_psi", "cond_eif_psi", "known_ratio_phi"};
  return names;
}

inline std::string canonical_regime(const std::string& name) {
  if (name == "cond_if") return "cond_if_phi";
  if (name == "cond_eif") return "cond_eif_phi";
  for (const auto& r : known_regimes()) {
    if (r == name) return r;
  }
  throw Error(ErrorKind::config, "unknown regime '" + name + "'");
}

inline void SettingSpec::validate() const {
  if (n < 1 || m < 1) throw Error(ErrorKind::config, "n and m must be >= 1");
  if (regimes.empty()) throw Error(ErrorKind::config, "at least one regime is required");
  for (const auto& r : regimes) canonical_regime(r);
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::config, "level must be in (0,1)");
}

/// Learner specs of the two estimated-nuisance arms.
inline NuisanceSpec nuisance_spec_for(NuisanceMode mode, int folds, std::uint64_t seed,
                                      bool stack = false, int neighbors = 50) {
  NuisanceSpec ns;
  ns.folds = folds;
  ns.seed = seed;
  if (mode == NuisanceMode::working) {
    ns.outcome = LearnerSpec::logistic(2, true);
    ns.propensity = LearnerSpec::logistic(1, false);
    ns.ratio = LearnerSpec::logistic(2, true);
    ns.ratio.max_power = 1;
  } else {
    ns.outcome = LearnerSpec::logistic(3, true);
    ns.propensity = LearnerSpec::logistic(3, true);
    ns.ratio = LearnerSpec::logistic(3, true);
    if (stack) {
      LearnerSpec knn;
      knn.kind = LearnerKind::knn;
      knn.neighbors = neighbors;
      for (LearnerSpec* target : {&ns.outcome}) {
        LearnerSpec st;
        st.kind = LearnerKind::stack;
        st.library = {*target, knn};
        *target = st;
      }
    }
  }
  return ns;
}

/// Estimates of one regime on one dataset.
inline EstimateReport run_regime(Setting s, const std::string& regime, const ComparisonDataset& d,
                                 const NuisanceBundle& b, const EstimatorOptions& opts = {}) {
  const std::string r = canonical_regime(regime);
  const Vector rho = setting_rho(s);
  const int K = d.players;
  if (r == "phi") return one_step_phi(d, b, rho, opts);
  if (r == "psi") return one_step_psi(d, b, rho, opts);
  if (r == "phi_fusion") return one_step_phi_fusion(d, b, rho, opts);
  if (r == "psi_fusion") return one_step_psi_fusion(d, b, rho, opts);
  if (r == "cond_if_phi") return cond_bt_if_phi(d, b, build_gamma(setting_if_pairs(s), K), opts, true);
  if (r == "cond_eif_phi") return cond_bt_eif_phi(d, b, opts, true);
  if (r == "cond_if_psi") {
    return cond_bt_psi(d, b, build_gamma(setting_if_pairs(s), K), rho, opts, true, false);
  }
  if (r == "cond_eif_psi") return cond_bt_psi(d, b, std::nullopt, rho, opts, true, true);
  // known_ratio_phi
  Vector w(static_cast<Eigen::Index>(d.n()));
  for (std::size_t i = 0; i < d.n(); ++i) {
    w[static_cast<Eigen::Index>(i)] = true_density_ratio(d.labeled[i].x[0], d.labeled[i].x[1]);
  }
  return known_ratio_phi(d, w, b, rho, opts);
}

/// True parameter targeted by a regime.
inline StrengthVector regime_truth(Setting s, const std::string& regime) {
  const std::string r = canonical_regime(regime);
  const bool no_shift = r == "phi" || r == "psi";
  const TrueValues tv = true_values(s, no_shift ? CovariateLaw::labeled : CovariateLaw::target);
  return r.find("psi") != std::string::npos ? tv.psi : tv.phi;
}

struct ReplicationResult {
  bool ok = false;
  std::string error;
  std::map<std::string, EstimateReport> reports;
};

struct MetricsRow {
  std::string regime;
  std::string estimator;  // one_step or plug_in
  int component = 2;      // player index
  double truth = 0.0;
  double mean_estimate = 0.0;
  double scaled_bias = 0.0;  // sqrt(n) |mean bias|
  double coverage = 0.0;
  double mean_width = 0.0;
  double mean_std = 0.0;
  int replications = 0;
};

struct ReplicationTable {
  SettingSpec spec;
  int requested = 0;
  int failures = 0;
  std::vector<MetricsRow> rows;
  std::vector<ReplicationResult> runs;
};

inline ReplicationResult run_one_replication(const SettingSpec& spec, int index) {
  ReplicationResult out;
  const std::uint64_t seed = mix_seed(spec.seed, static_cast<std::uint64_t>(index));
  try {
    const ComparisonDataset d = gen_setting(spec.setting, spec.n, spec.m, seed);
    const NuisanceBundle b = spec.mode == NuisanceMode::oracle
                                 ? oracle_bundle(spec.setting, d, spec.folds, seed)
                                 : fit_nuisance(d, nuisance_spec_for(spec.mode, spec.folds, mix_seed(seed, 77),
                                                                   spec.stack, spec.neighbors));
    EstimatorOptions opts;
    opts.level = spec.level;
    for (const auto& r : spec.regimes) {
      EstimateReport rep = run_regime(spec.setting, r, d, b, opts);
      rep.influence.values.resize(0, 0);  // not needed downstream; keeps memory flat
      out.reports.emplace(canonical_regime(r), std::move(rep));
    }
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
    out.reports.clear();
  }
  return out;
}

inline ReplicationTable run_replications(const SettingSpec& spec, int R) {
  spec.validate();
  if (R < 1) throw Error(ErrorKind::config, "replication count must be >= 1");
  ReplicationTable table;
  table.spec = spec;
  table.requested = R;
  table.runs.resize(static_cast<std::size_t>(R));
  unsigned T = spec.threads ? spec.threads : std::max(1u, std::thread::hardware_concurrency());
  T = std::min<unsigned>(T, static_cast<unsigned>(R));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < T; ++t) {
    pool.emplace_back([&, t] {
      for (int r = static_cast<int>(t); r < R; r += static_cast<int>(T)) {
        table.runs[static_cast<std::size_t>(r)] = run_one_replication(spec, r);
      }
    });
  }
  for (auto& th : pool) th.join();
  const double z = normal_quantile(0.5 + 0.5 * spec.level);
  for (const auto& run : table.runs) table.failures += run.ok ? 0 : 1;
  for (const auto& regime_raw : spec.regimes) {
    const std::string regime = canonical_regime(regime_raw);
    const StrengthVector truth = regime_truth(spec.setting, regime);
    for (const char* est : {"one_step", "plug_in"}) {
      const bool one_step = std::string(est) == "one_step";
      for (Eigen::Index k = 0; k < truth.size(); ++k) {
        MetricsRow row;
        row.regime = regime;
        row.estimator = est;
        row.component = static_cast<int>(k) + 2;
        row.truth = truth[k];
        double sum = 0.0, cover = 0.0, width = 0.0, sd = 0.0;
        int count = 0;
        for (const auto& run : table.runs) {
          if (!run.ok) continue;
          const EstimateReport& rep = run.reports.at(regime);
          const double se = std::sqrt(std::max(rep.covariance(k, k), 0.0));
          const double v = one_step ? rep.point[k] : rep.plug_in[k];
          sum += v;
          cover += std::abs(v - truth[k]) <= z * se ? 1.0 : 0.0;
          width += 2.0 * z * se;
          sd += se;
          ++count;
        }
        row.replications = count;
        if (count > 0) {
          row.mean_estimate = sum / count;
          row.scaled_bias = std::sqrt(static_cast<double>(spec.n)) * std::abs(row.mean_estimate - truth[k]);
          row.coverage = cover / count;
          row.mean_width = width / count;
          row.mean_std = sd / count;
        }
        table.rows.push_back(row);
      }
    }
  }
  return table;
}

inline const MetricsRow& find_row(const ReplicationTable& t, const std::string& regime,
                                  const std::string& estimator, int component) {
  for (const auto& r : t.rows) {
    if (r.regime == canonical_regime(regime) && r.estimator == estimator && r.component == component) return r;
  }
  throw Error(ErrorKind::invalid_argument, "no metrics row for " + regime + "/" + estimator);
}

}  // namespace btshift
