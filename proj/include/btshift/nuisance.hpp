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

// Cross-fitted nuisance estimates. All predictions are stored as dense
// per-record tables: record i < n is labeled record i, record i >= n is
// unlabeled covariate vector i - n.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "btshift/core.hpp"
#include "btshift/learners.hpp"
#include "btshift/numeric.hpp"

namespace btshift {

enum class RatioRoute { classifier, categorical };

struct NuisanceSpec {
  LearnerSpec outcome = LearnerSpec::logistic(3, true);
  LearnerSpec propensity = LearnerSpec::logistic(1, false);
  LearnerSpec ratio = LearnerSpec::logistic(3, true);
  RatioRoute ratio_route = RatioRoute::classifier;
  int folds = 5;
  std::uint64_t seed = 0;
  double clip_eps = 0.01;
  double ratio_cap = 20.0;

  void validate() const {
    outcome.validate();
    propensity.validate();
    ratio.validate();
    if (folds < 2) throw Error(ErrorKind::config, "at least two folds are required");
    if (!(clip_eps > 0.0 && clip_eps < 0.5)) throw Error(ErrorKind::config, "clip_eps must be in (0, 0.5)");
    if (!(ratio_cap > 1.0)) throw Error(ErrorKind::config, "ratio_cap must exceed 1");
  }
};

/// Frozen nuisance predictions for every record.
struct NuisanceBundle {
  int players = 2;
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<int> folds;
  /// Records whose data trained the predictors applied to fold v.
  std::vector<std::vector<std::size_t>> training_pool;
  std::vector<bool> observed;  // per canonical pair
  Matrix outcome;              // (n+m) x P, NaN for unobserved pairs
  Matrix propensity;           // (n+m) x P, zero for unobserved pairs
  Vector ratio;                // (n+m); empty unless fusion
  double clip_eps = 0.01;
  Diagnostics diagnostics;

  std::size_t total() const { return n + m; }
  bool has_ratio() const { return ratio.size() > 0; }
  int observed_count() const { return static_cast<int>(std::count(observed.begin(), observed.end(), true)); }
};

/// Folds stratified by S: each stratum is shuffled and dealt round-robin,
/// the unlabeled stratum continuing where the labeled one stopped, so fold
/// sizes differ by at most one with the larger folds first.
inline std::vector<int> assign_folds(std::size_t n, std::size_t m, int V, std::uint64_t seed) {
  if (V < 2) throw Error(ErrorKind::invalid_argument, "fold count must be >= 2");
  if (n + m == 0) throw Error(ErrorKind::invalid_argument, "cannot fold an empty dataset");
  if (static_cast<std::size_t>(V) > n + m) {
    throw Error(ErrorKind::invalid_argument, "fold count " + std::to_string(V) +
                                                 " exceeds sample size " + std::to_string(n + m));
  }
  std::vector<int> folds(n + m);
  std::mt19937_64 rng(mix_seed(seed, 0xF01D));
  std::size_t dealt = 0;
  for (auto [start, size] : {std::pair{std::size_t{0}, n}, std::pair{n, m}}) {
    std::vector<std::size_t> order(size);
    std::iota(order.begin(), order.end(), start);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t r = 0; r < size; ++r, ++dealt) folds[order[r]] = static_cast<int>(dealt % V);
  }
  return folds;
}

inline std::vector<int> assign_folds(const ComparisonDataset& data, int V, std::uint64_t seed) {
  return assign_folds(data.n(), data.m(), V, seed);
}

namespace detail {

inline double clip_count(double v, double lo, double hi, int& count) {
  if (v < lo || v > hi) ++count;
  return clip(v, lo, hi);
}

/// Clip to [eps, 1] and renormalize, fixing entries at the floor until the
/// floor holds after renormalization.
inline void clip_simplex(Eigen::Ref<Vector> p, const std::vector<int>& support, double eps,
                         int& clipped) {
  std::vector<bool> fixed(support.size(), false);
  bool any = false;
  for (int pass = 0; pass < static_cast<int>(support.size()) + 1; ++pass) {
    double free_mass = 0.0;
    int nfixed = 0;
    for (std::size_t s = 0; s < support.size(); ++s) {
      if (fixed[s]) {
        ++nfixed;
      } else {
        free_mass += std::max(p[support[s]], 0.0);
      }
    }
    const double target = 1.0 - eps * nfixed;
    bool changed = false;
    for (std::size_t s = 0; s < support.size(); ++s) {
      double& v = p[support[s]];
      if (fixed[s]) {
        v = eps;
        continue;
      }
      v = free_mass > 0.0 ? std::max(v, 0.0) * target / free_mass
                          : target / static_cast<double>(support.size() - nfixed);
      if (v < eps) {
        fixed[s] = true;
        changed = true;
        any = true;
      }
    }
    if (!changed) break;
  }
  if (any) ++clipped;
}

}  // namespace detail

/// Out-of-fold m-hat for every observed pair, evaluated at all records.
inline Matrix fit_outcome(const ComparisonDataset& data, const NuisanceSpec& spec,
                          const std::vector<int>& folds, Diagnostics* diag = nullptr) {
  const int K = data.players;
  const int P = pair_count(K);
  const Matrix X = data.design();
  const auto N = static_cast<Eigen::Index>(data.total());
  Matrix out = Matrix::Constant(N, P, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::vector<std::size_t>> by_pair(static_cast<std::size_t>(P));
  for (std::size_t i = 0; i < data.n(); ++i) {
    by_pair[static_cast<std::size_t>(pair_to_index(data.labeled[i].pair, K))].push_back(i);
  }
  int clipped = 0;
  const int V = 1 + *std::max_element(folds.begin(), folds.end());
  for (int j = 0; j < P; ++j) {
    const auto& rows = by_pair[static_cast<std::size_t>(j)];
    if (rows.empty()) continue;
    for (int v = 0; v < V; ++v) {
      std::vector<Eigen::Index> tr, te;
      for (auto i : rows) {
        if (folds[i] != v) tr.push_back(static_cast<Eigen::Index>(i));
      }
      for (Eigen::Index i = 0; i < N; ++i) {
        if (folds[static_cast<std::size_t>(i)] == v) te.push_back(i);
      }
      if (te.empty()) continue;
      if (tr.empty()) {
        throw Error(ErrorKind::data, "no training records for pair " +
                                         to_string(index_to_pair(j, K)) + " outside fold " +
                                         std::to_string(v));
      }
      Vector y(static_cast<Eigen::Index>(tr.size()));
      for (std::size_t t = 0; t < tr.size(); ++t) {
        y[static_cast<Eigen::Index>(t)] = data.labeled[static_cast<std::size_t>(tr[t])].y;
      }
      const Vector pred =
          fit_learner(spec.outcome, X(tr, Eigen::all), y, mix_seed(spec.seed, 100 + j * 97 + v))
              ->predict(X(te, Eigen::all));
      for (std::size_t t = 0; t < te.size(); ++t) {
        out(te[t], j) = detail::clip_count(pred[static_cast<Eigen::Index>(t)], spec.clip_eps,
                                           1.0 - spec.clip_eps, clipped);
      }
    }
  }
  if (diag) diag->clipped_outcome += clipped;
  return out;
}

/// Out-of-fold pi-hat(a | x) over observed pairs (one-vs-rest, renormalized,
/// floor at clip_eps).
inline Matrix fit_propensity(const ComparisonDataset& data, const NuisanceSpec& spec,
                             const std::vector<int>& folds, Diagnostics* diag = nullptr) {
  const int K = data.players;
  const int P = pair_count(K);
  const auto N = static_cast<Eigen::Index>(data.total());
  std::vector<int> support;
  {
    std::vector<bool> seen(static_cast<std::size_t>(P), false);
    for (const auto& r : data.labeled) seen[static_cast<std::size_t>(pair_to_index(r.pair, K))] = true;
    for (int j = 0; j < P; ++j) {
      if (seen[static_cast<std::size_t>(j)]) support.push_back(j);
    }
  }
  Matrix out = Matrix::Zero(N, P);
  if (support.size() == 1) {
    out.col(support[0]).setOnes();
    return out;
  }
  if (spec.clip_eps * static_cast<double>(support.size()) >= 1.0) {
    throw Error(ErrorKind::config, "clip_eps too large for the number of observed pairs");
  }
  const Matrix X = data.design();
  const int V = 1 + *std::max_element(folds.begin(), folds.end());
  for (int v = 0; v < V; ++v) {
    std::vector<Eigen::Index> tr, te;
    for (std::size_t i = 0; i < data.n(); ++i) {
      if (folds[i] != v) tr.push_back(static_cast<Eigen::Index>(i));
    }
    for (Eigen::Index i = 0; i < N; ++i) {
      if (folds[static_cast<std::size_t>(i)] == v) te.push_back(i);
    }
    if (te.empty()) continue;
    if (tr.empty()) throw Error(ErrorKind::data, "no labeled records outside fold " + std::to_string(v));
    const Matrix Xtr = X(tr, Eigen::all), Xte = X(te, Eigen::all);
    for (int j : support) {
      Vector y(static_cast<Eigen::Index>(tr.size()));
      for (std::size_t t = 0; t < tr.size(); ++t) {
        y[static_cast<Eigen::Index>(t)] =
            pair_to_index(data.labeled[static_cast<std::size_t>(tr[t])].pair, K) == j ? 1.0 : 0.0;
      }
      const Vector pred =
          fit_learner(spec.propensity, Xtr, y, mix_seed(spec.seed, 5000 + j * 97 + v))->predict(Xte);
      for (std::size_t t = 0; t < te.size(); ++t) out(te[t], j) = pred[static_cast<Eigen::Index>(t)];
    }
  }
  int clipped = 0;
  for (Eigen::Index i = 0; i < N; ++i) {
    Vector row = out.row(i).transpose();
    detail::clip_simplex(row, support, spec.clip_eps, clipped);
    out.row(i) = row.transpose();
  }
  if (diag) diag->clipped_propensity += clipped;
  return out;
}

/// w-hat = dQ_X / dP_X at every record, clipped to [1/cap, cap].
inline Vector fit_density_ratio(const ComparisonDataset& data, const NuisanceSpec& spec,
                                const std::vector<int>& folds, Diagnostics* diag = nullptr) {
  if (!data.fusion() || data.m() == 0) {
    throw Error(ErrorKind::invalid_argument, "density-ratio estimation needs an unlabeled block");
  }
  const auto N = static_cast<Eigen::Index>(data.total());
  const double n = static_cast<double>(data.n());
  const double m = static_cast<double>(data.m());
  const Matrix X = data.design();
  Vector w(N);
  int clipped = 0;
  const double lo = 1.0 / spec.ratio_cap, hi = spec.ratio_cap;
  if (spec.ratio_route == RatioRoute::categorical) {
    std::map<std::vector<double>, std::pair<double, double>> cells;  // (labeled, unlabeled)
    for (Eigen::Index i = 0; i < N; ++i) {
      auto& c = cells[detail::CellMeanModel::key(X, i)];
      (static_cast<std::size_t>(i) < data.n() ? c.first : c.second) += 1.0;
    }
    for (const auto& [key, c] : cells) {
      if (c.first == 0.0) {
        throw Error(ErrorKind::positivity,
                    "a covariate category occurs in the unlabeled data but never in the labeled "
                    "data; the target law must be absolutely continuous with respect to the "
                    "labeled law");
      }
    }
    for (Eigen::Index i = 0; i < N; ++i) {
      const auto& c = cells[detail::CellMeanModel::key(X, i)];
      w[i] = detail::clip_count((c.second / m) / (c.first / n), lo, hi, clipped);
    }
    const double mean_lab = w.head(static_cast<Eigen::Index>(data.n())).mean();
    w /= mean_lab;
  } else {
    const int V = 1 + *std::max_element(folds.begin(), folds.end());
    for (int v = 0; v < V; ++v) {
      std::vector<Eigen::Index> tr, te;
      for (Eigen::Index i = 0; i < N; ++i) {
        (folds[static_cast<std::size_t>(i)] == v ? te : tr).push_back(i);
      }
      if (te.empty()) continue;
      Vector s(static_cast<Eigen::Index>(tr.size()));
      for (std::size_t t = 0; t < tr.size(); ++t) {
        s[static_cast<Eigen::Index>(t)] = static_cast<std::size_t>(tr[t]) < data.n() ? 1.0 : 0.0;
      }
      const Vector p = fit_learner(spec.ratio, X(tr, Eigen::all), s, mix_seed(spec.seed, 9000 + v))
                           ->predict(X(te, Eigen::all));
      for (std::size_t t = 0; t < te.size(); ++t) {
        const double pt = clip(p[static_cast<Eigen::Index>(t)], 1e-12, 1.0 - 1e-12);
        w[te[t]] = detail::clip_count((1.0 - pt) / pt * (n / m), lo, hi, clipped);
      }
    }
  }
  if (diag) diag->clipped_ratio += clipped;
  return w;
}

inline NuisanceBundle fit_nuisance(const ComparisonDataset& data, const NuisanceSpec& spec) {
  spec.validate();
  data.validate();
  NuisanceBundle b;
  b.players = data.players;
  b.n = data.n();
  b.m = data.m();
  b.clip_eps = spec.clip_eps;
  b.folds = assign_folds(data, spec.folds, spec.seed);
  b.training_pool.assign(static_cast<std::size_t>(spec.folds), {});
  for (int v = 0; v < spec.folds; ++v) {
    for (std::size_t i = 0; i < data.total(); ++i) {
      if (b.folds[i] != v) b.training_pool[static_cast<std::size_t>(v)].push_back(i);
    }
    b.diagnostics.fold_seeds.push_back(mix_seed(spec.seed, static_cast<std::uint64_t>(v)));
  }
  b.observed.assign(static_cast<std::size_t>(pair_count(data.players)), false);
  for (const auto& r : data.labeled) {
    b.observed[static_cast<std::size_t>(pair_to_index(r.pair, data.players))] = true;
  }
  b.outcome = fit_outcome(data, spec, b.folds, &b.diagnostics);
  b.propensity = fit_propensity(data, spec, b.folds, &b.diagnostics);
  if (data.fusion() && data.m() > 0) b.ratio = fit_density_ratio(data, spec, b.folds, &b.diagnostics);
  b.diagnostics.records = data.total();
  return b;
}

}  // namespace btshift
