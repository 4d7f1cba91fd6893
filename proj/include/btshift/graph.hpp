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

// Comparison matrices (signed incidence with the reference column dropped)
// and the weighted Laplacians built from them.

#pragma once

#include <Eigen/Cholesky>

#include <set>
#include <string>
#include <vector>

#include "btshift/core.hpp"

namespace btshift {

class ComparisonMatrix {
 public:
  ComparisonMatrix(int players, std::vector<Pair> rows)
      : players_(players), rows_(std::move(rows)) {
    check_players(players_);
    std::set<Pair> seen;
    for (const Pair& p : rows_) {
      pair_to_index(p, players_);
      if (!seen.insert(p).second) {
        throw Error(ErrorKind::invalid_pair, "duplicate pair " + to_string(p) +
                                                 " in comparison matrix");
      }
    }
  }

  int players() const { return players_; }
  int rows() const { return static_cast<int>(rows_.size()); }
  const std::vector<Pair>& pairs() const { return rows_; }
  const Pair& pair(int j) const { return rows_[j]; }

  /// Dense J x (K-1) view: +1 at player k_j, -1 at player l_j.
  Matrix matrix() const {
    Matrix G = Matrix::Zero(rows(), players_ - 1);
    for (int j = 0; j < rows(); ++j) {
      if (rows_[j].first >= 2) G(j, rows_[j].first - 2) = 1.0;
      G(j, rows_[j].second - 2) = -1.0;
    }
    return G;
  }

  /// Canonical-order rows of the pairs, for looking up per-pair quantities.
  std::vector<int> pair_indices() const {
    std::vector<int> out;
    out.reserve(rows_.size());
    for (const Pair& p : rows_) out.push_back(pair_to_index(p, players_));
    return out;
  }

 private:
  int players_;
  std::vector<Pair> rows_;
};

inline ComparisonMatrix build_gamma(const std::vector<Pair>& pairs, int players) {
  return ComparisonMatrix(players, pairs);
}

inline ComparisonMatrix build_gamma_full(int players) {
  check_players(players);
  std::vector<Pair> rows;
  for (int j = 0; j < pair_count(players); ++j) rows.push_back(index_to_pair(j, players));
  return ComparisonMatrix(players, rows);
}

/// Full column rank of Gamma, decided as connectivity of the comparison graph.
inline bool is_identifiable(const ComparisonMatrix& gamma) {
  detail::UnionFind uf(gamma.players());
  int merges = 0;
  for (const Pair& p : gamma.pairs()) {
    if (uf.unite(p.first - 1, p.second - 1)) ++merges;
  }
  return merges == gamma.players() - 1;
}

struct WeightedLaplacian {
  int players = 2;
  std::vector<Pair> pairs;
  Vector weights;
  Matrix L;
};

/// L = Gamma^T diag(weights) Gamma, weights aligned with gamma rows.
inline WeightedLaplacian weighted_laplacian(const ComparisonMatrix& gamma, const Vector& weights) {
  if (weights.size() != gamma.rows()) {
    throw Error(ErrorKind::invalid_argument, "one weight per comparison-matrix row is required");
  }
  WeightedLaplacian out;
  out.players = gamma.players();
  out.pairs = gamma.pairs();
  out.weights = weights;
  out.L = Matrix::Zero(gamma.players() - 1, gamma.players() - 1);
  for (int j = 0; j < gamma.rows(); ++j) {
    const double w = weights[j];
    if (w < 0.0 || !std::isfinite(w)) {
      throw Error(ErrorKind::invalid_argument, "Laplacian weights must be finite and >= 0");
    }
    if (w == 0.0) continue;
    const int k = gamma.pair(j).first - 2;
    const int l = gamma.pair(j).second - 2;
    if (k >= 0) {
      out.L(k, k) += w;
      out.L(k, l) -= w;
      out.L(l, k) -= w;
    }
    out.L(l, l) += w;
  }
  return out;
}

/// Weights m_j (1 - m_j) pi_j over the full pair set; m and pi in canonical order.
inline WeightedLaplacian weighted_laplacian(const ComparisonMatrix& gamma_full,
                                            const WinProbVector& m, const Vector& pi) {
  const auto idx = gamma_full.pair_indices();
  Vector w(gamma_full.rows());
  for (int j = 0; j < gamma_full.rows(); ++j) {
    const double mj = m.free()[idx[j]];
    w[j] = mj * (1.0 - mj) * pi[idx[j]];
  }
  return weighted_laplacian(gamma_full, w);
}

inline bool laplacian_connected(const WeightedLaplacian& lap) {
  detail::UnionFind uf(lap.players);
  int merges = 0;
  for (std::size_t j = 0; j < lap.pairs.size(); ++j) {
    if (lap.weights[static_cast<Eigen::Index>(j)] > 0.0 &&
        uf.unite(lap.pairs[j].first - 1, lap.pairs[j].second - 1)) {
      ++merges;
    }
  }
  return merges == lap.players - 1;
}

inline Matrix laplacian_solve(const WeightedLaplacian& lap, const Matrix& b) {
  if (!laplacian_connected(lap)) {
    throw Error(ErrorKind::identification,
                "positive-weight comparison graph is disconnected; Laplacian is singular");
  }
  Eigen::LLT<Matrix> llt(lap.L);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::numerical, "Laplacian Cholesky factorization failed");
  }
  return llt.solve(b);
}

inline Vector laplacian_solve(const WeightedLaplacian& lap, const Vector& b) {
  return laplacian_solve(lap, Matrix(b)).col(0);
}

/// (Gamma^T Gamma)^{-1} Gamma^T, precomputed for a fixed full-rank Gamma.
class GammaPseudoInverse {
 public:
  explicit GammaPseudoInverse(const ComparisonMatrix& gamma) {
    if (!is_identifiable(gamma)) {
      throw Error(ErrorKind::identification,
                  "comparison matrix is rank deficient: the comparison graph must connect all "
                  "players");
    }
    const Matrix G = gamma.matrix();
    Eigen::LLT<Matrix> llt(G.transpose() * G);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorKind::numerical, "Gamma^T Gamma factorization failed");
    }
    pinv_ = llt.solve(G.transpose());
  }
  const Matrix& matrix() const { return pinv_; }
  Vector apply(const Vector& b) const {
    if (b.size() != pinv_.cols()) {
      throw Error(ErrorKind::invalid_argument, "vector length must equal the number of rows of Gamma");
    }
    return pinv_ * b;
  }

 private:
  Matrix pinv_;
};

inline Vector gamma_pseudoinverse_apply(const ComparisonMatrix& gamma, const Vector& b) {
  return GammaPseudoInverse(gamma).apply(b);
}

}  // namespace btshift
