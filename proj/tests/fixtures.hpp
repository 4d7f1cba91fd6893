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

// Random datasets with hand-set nuisance values, mirrored into the plain
// containers the oracles consume.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "btshift/btshift.hpp"
#include "oracles.hpp"

namespace fixtures {

using namespace btshift;

struct RandomInstance {
  ComparisonDataset data;
  NuisanceBundle bundle;
  Vector rho;
  oracle::Instance inst;
};

inline oracle::Vec row_of(const Matrix& M, Eigen::Index i) {
  oracle::Vec v(static_cast<std::size_t>(M.cols()));
  for (Eigen::Index j = 0; j < M.cols(); ++j) v[static_cast<std::size_t>(j)] = M(i, j);
  return v;
}

/// `pairs` lists the observed pairs (all pairs when empty).
inline RandomInstance make_instance(int K, int n, int m, std::uint64_t seed, std::vector<Pair> pairs = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int P = pair_count(K);
  if (pairs.empty()) {
    for (int j = 0; j < P; ++j) pairs.push_back(index_to_pair(j, K));
  }
  RandomInstance r;
  r.data.players = K;
  r.data.dimension = 1;
  for (int i = 0; i < n; ++i) {
    const Pair a = pairs[static_cast<std::size_t>(std::uniform_int_distribution<int>(0, static_cast<int>(pairs.size()) - 1)(rng))];
    const double y = std::floor(u(rng) * 3.0) / 2.0;  // 0, 0.5 or 1
    r.data.labeled.push_back({{u(rng)}, a, y});
  }
  if (m > 0) {
    std::vector<std::vector<double>> xs;
    for (int i = 0; i < m; ++i) xs.push_back({u(rng)});
    r.data.unlabeled = xs;
  }
  const int N = n + m;
  NuisanceBundle& b = r.bundle;
  b.players = K;
  b.n = static_cast<std::size_t>(n);
  b.m = static_cast<std::size_t>(m);
  b.folds = assign_folds(r.data, 2, seed);
  b.observed.assign(static_cast<std::size_t>(P), false);
  for (const Pair& p : pairs) b.observed[static_cast<std::size_t>(pair_to_index(p, K))] = true;
  b.outcome = Matrix::Constant(N, P, std::numeric_limits<double>::quiet_NaN());
  b.propensity = Matrix::Zero(N, P);
  for (int i = 0; i < N; ++i) {
    double total = 0.0;
    for (const Pair& p : pairs) {
      const int j = pair_to_index(p, K);
      b.outcome(i, j) = 0.1 + 0.8 * u(rng);
      b.propensity(i, j) = 0.2 + u(rng);
      total += b.propensity(i, j);
    }
    b.propensity.row(i) /= total;
  }
  if (m > 0) {
    b.ratio = Vector(N);
    for (int i = 0; i < N; ++i) b.ratio[i] = 0.3 + 2.7 * u(rng);
  }
  r.rho = Vector(P);
  for (int j = 0; j < P; ++j) r.rho[j] = 0.1 + u(rng);
  r.rho /= r.rho.sum();

  oracle::Instance& o = r.inst;
  o.K = K;
  o.n = n;
  o.N = N;
  for (const auto& rec : r.data.labeled) {
    o.a.push_back({rec.pair.first, rec.pair.second});
    o.y.push_back(rec.y);
  }
  for (int i = 0; i < N; ++i) {
    o.mhat.push_back(row_of(b.outcome, i));
    o.pihat.push_back(row_of(b.propensity, i));
  }
  if (m > 0) o.what = oracle::Vec(b.ratio.data(), b.ratio.data() + N);
  o.rho = oracle::Vec(r.rho.data(), r.rho.data() + P);
  return r;
}

/// Random spanning tree over K players (a valid minimal comparison set).
inline std::vector<Pair> random_tree(int K, std::mt19937_64& rng) {
  std::vector<int> order(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) order[static_cast<std::size_t>(k)] = k + 1;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Pair> out;
  for (int t = 1; t < K; ++t) {
    const int parent = order[static_cast<std::size_t>(std::uniform_int_distribution<int>(0, t - 1)(rng))];
    const int child = order[static_cast<std::size_t>(t)];
    out.push_back({std::min(parent, child), std::max(parent, child)});
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline double max_abs_diff(const Vector& a, const oracle::Vec& b) {
  double d = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a[k] - b[static_cast<std::size_t>(k)]));
  return d;
}

}  // namespace fixtures
