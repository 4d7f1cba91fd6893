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

// Domain types shared by every btshift module: players and pairs, target
// sampling weights, comparison records and datasets, win-probability vectors
// and the estimate report container.
//
// Conventions used throughout the library:
//   * players are 1-based, player 1 is the reference with strength 0;
//   * unordered pairs (k, l), k < l, are stored in lexicographic order and
//     addressed by a 0-based row index j in [0, K(K-1)/2);
//   * a strength vector holds (theta_2, ..., theta_K), length K-1;
//   * an outcome y in [0, 1] is the score of the smaller-index player
//     (1 = win, 0.5 = tie, 0 = loss).

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace btshift {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Strengths (theta_2, ..., theta_K); the reference strength is implicit.
using StrengthVector = Eigen::VectorXd;

enum class ErrorKind {
  invalid_argument,
  invalid_pair,
  identification,
  positivity,
  numerical,
  data,
  config,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::invalid_pair: return "invalid_pair";
    case ErrorKind::identification: return "identification";
    case ErrorKind::positivity: return "positivity";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::data: return "data";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct Pair {
  int first = 1;
  int second = 2;
  friend bool operator==(const Pair&, const Pair&) = default;
  friend auto operator<=>(const Pair&, const Pair&) = default;
};

inline int pair_count(int players) { return players * (players - 1) / 2; }

inline void check_players(int players) {
  if (players < 2) {
    throw Error(ErrorKind::invalid_argument,
                "at least two players are required, got " +
                    std::to_string(players));
  }
}

inline std::string to_string(const Pair& p) {
  return "(" + std::to_string(p.first) + "," + std::to_string(p.second) + ")";
}

/// Row of (k, l) in the lexicographic pair order.
inline int pair_to_index(Pair p, int players) {
  if (p.first < 1 || p.second > players || p.first >= p.second) {
    throw Error(ErrorKind::invalid_pair, "invalid pair " + to_string(p) +
                                             " for K=" +
                                             std::to_string(players));
  }
  const int k = p.first - 1;
  // Rows preceding first player k: sum_{r<k} (K-1-r).
  return k * (2 * players - k - 1) / 2 + (p.second - p.first - 1);
}

inline Pair index_to_pair(int index, int players) {
  if (index < 0 || index >= pair_count(players)) {
    throw Error(ErrorKind::invalid_pair,
                "pair index " + std::to_string(index) + " out of range for K=" +
                    std::to_string(players));
  }
  int k = 1;
  int row = index;
  while (row >= players - k) {
    row -= players - k;
    ++k;
  }
  return Pair{k, k + 1 + row};
}

/// Slot of m_kl (k >= 2, l != k) in the (K-1)^2 win-probability layout
/// (m_2^T, ..., m_K^T) with m_k = (m_k1, ..., m_k(k-1), m_k(k+1), ..., m_kK).
inline int full_slot(int k, int l, int players) {
  return (k - 2) * (players - 1) + (l < k ? l - 1 : l - 2);
}

namespace detail {

class UnionFind {
 public:
  explicit UnionFind(int size) : parent_(size) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }
  int find(int a) {
    while (parent_[a] != a) {
      parent_[a] = parent_[parent_[a]];
      a = parent_[a];
    }
    return a;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent_[b] = a;
    return true;
  }

 private:
  std::vector<int> parent_;
};

// True iff the pairs with weight > 0 connect all players.
inline bool weights_connect(int players, const Vector& pair_weights) {
  UnionFind uf(players);
  int merges = 0;
  for (int j = 0; j < pair_weights.size(); ++j) {
    if (pair_weights[j] > 0.0) {
      const Pair p = index_to_pair(j, players);
      if (uf.unite(p.first - 1, p.second - 1)) ++merges;
    }
  }
  return merges == players - 1;
}

}  // namespace detail

/// Player set plus the target sampling weights rho_kl used to define the
/// estimands. rho is symmetric by construction (one value per unordered pair).
class PairwiseScheme {
 public:
  using RhoFunction = std::function<Vector(const std::vector<double>&)>;

  PairwiseScheme(int players, Vector rho) : players_(players), rho_(std::move(rho)) {
    check_players(players_);
    if (rho_.size() != pair_count(players_)) {
      throw Error(ErrorKind::invalid_argument,
                  "rho must have K(K-1)/2 entries");
    }
    for (int j = 0; j < rho_.size(); ++j) {
      if (!std::isfinite(rho_[j]) || rho_[j] < 0.0) {
        throw Error(ErrorKind::invalid_argument,
                    "rho entries must be finite and non-negative");
      }
    }
    if (!detail::weights_connect(players_, rho_)) {
      throw Error(ErrorKind::identification,
                  "the rho-weighted comparison graph is disconnected; every "
                  "player must be comparable under the target scheme");
    }
  }

  static PairwiseScheme uniform(int players) {
    check_players(players);
    return PairwiseScheme(
        players, Vector::Constant(pair_count(players), 1.0 / pair_count(players)));
  }

  /// Per-record rho; the constant table is still used for estimands built
  /// from marginal quantities.
  PairwiseScheme with_function(RhoFunction fn) const {
    PairwiseScheme copy = *this;
    copy.rho_fn_ = std::move(fn);
    return copy;
  }

  int players() const { return players_; }
  int pairs() const { return pair_count(players_); }
  const Vector& rho() const { return rho_; }
  Vector rho_at(const std::vector<double>& x) const {
    return rho_fn_ ? rho_fn_(x) : rho_;
  }
  int index(Pair p) const { return pair_to_index(p, players_); }
  Pair pair(int j) const { return index_to_pair(j, players_); }

 private:
  int players_;
  Vector rho_;
  RhoFunction rho_fn_;
};

struct ComparisonRecord {
  std::vector<double> x;
  Pair pair;
  double y = 0.0;
};

/// Labeled comparisons (S = 1) and, in data-fusion mode, unlabeled target
/// covariates (S = 0).
struct ComparisonDataset {
  int players = 2;
  int dimension = 0;
  std::vector<ComparisonRecord> labeled;
  std::optional<std::vector<std::vector<double>>> unlabeled;

  bool fusion() const { return unlabeled.has_value(); }
  std::size_t n() const { return labeled.size(); }
  std::size_t m() const { return unlabeled ? unlabeled->size() : 0; }
  std::size_t total() const { return n() + m(); }

  const std::vector<double>& covariates(std::size_t i) const {
    return i < labeled.size() ? labeled[i].x : (*unlabeled)[i - labeled.size()];
  }

  /// Stacked covariates, labeled rows first.
  Matrix design() const {
    Matrix X(static_cast<Eigen::Index>(total()), dimension);
    for (std::size_t i = 0; i < total(); ++i) {
      const auto& x = covariates(i);
      for (int c = 0; c < dimension; ++c) X(static_cast<Eigen::Index>(i), c) = x[c];
    }
    return X;
  }

  void validate() const {
    check_players(players);
    if (labeled.empty()) {
      throw Error(ErrorKind::data, "dataset has no labeled comparisons");
    }
    for (std::size_t i = 0; i < labeled.size(); ++i) {
      const auto& r = labeled[i];
      if (static_cast<int>(r.x.size()) != dimension) {
        throw Error(ErrorKind::data, "record " + std::to_string(i) +
                                         " has covariate dimension " +
                                         std::to_string(r.x.size()));
      }
      pair_to_index(r.pair, players);
      if (!(r.y >= 0.0 && r.y <= 1.0)) {
        throw Error(ErrorKind::data,
                    "record " + std::to_string(i) + " has outcome outside [0,1]");
      }
    }
    if (unlabeled) {
      for (const auto& x : *unlabeled) {
        if (static_cast<int>(x.size()) != dimension) {
          throw Error(ErrorKind::data,
                      "unlabeled covariate vector has wrong dimension");
        }
      }
    }
  }
};

/// Conditional win probabilities at one covariate value. Stores the
/// K(K-1)/2 free values m_kl (k < l); m_lk = 1 - m_kl by construction.
class WinProbVector {
 public:
  WinProbVector(int players, Vector free) : players_(players), free_(std::move(free)) {
    check_players(players_);
    if (free_.size() != pair_count(players_)) {
      throw Error(ErrorKind::invalid_argument,
                  "win-probability vector needs K(K-1)/2 values");
    }
    for (int j = 0; j < free_.size(); ++j) {
      if (!std::isfinite(free_[j])) {
        throw Error(ErrorKind::invalid_argument,
                    "non-finite win probability for pair " +
                        to_string(index_to_pair(j, players_)));
      }
      if (free_[j] <= 0.0 || free_[j] >= 1.0) {
        throw Error(ErrorKind::invalid_argument,
                    "win probability for pair " +
                        to_string(index_to_pair(j, players_)) +
                        " must lie strictly inside (0,1)");
      }
    }
  }

  int players() const { return players_; }
  const Vector& free() const { return free_; }

  /// m_kl for any ordered k != l (1-based).
  double operator()(int k, int l) const {
    return k < l ? free_[pair_to_index({k, l}, players_)]
                 : 1.0 - free_[pair_to_index({l, k}, players_)];
  }

  Vector full() const {
    const int K = players_;
    Vector out((K - 1) * (K - 1));
    for (int k = 2; k <= K; ++k) {
      for (int l = 1; l <= K; ++l) {
        if (l != k) out[full_slot(k, l, K)] = (*this)(k, l);
      }
    }
    return out;
  }

 private:
  int players_;
  Vector free_;
};

inline WinProbVector winvec_from_free(int players, const Vector& values) {
  return WinProbVector(players, values);
}

enum class Estimand { phi, psi };
enum class Regime { no_shift, fusion, cond_bt_if, cond_bt_eif, known_ratio };

inline const char* to_string(Estimand e) { return e == Estimand::phi ? "phi" : "psi"; }

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::no_shift: return "no_shift";
    case Regime::fusion: return "fusion";
    case Regime::cond_bt_if: return "cond_bt_if";
    case Regime::cond_bt_eif: return "cond_bt_eif";
    case Regime::known_ratio: return "known_ratio";
  }
  return "unknown";
}

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  double width() const { return upper - lower; }
  bool contains(double v) const { return lower <= v && v <= upper; }
};

/// Per-record evaluated influence values; row i belongs to record i
/// (labeled records first, then unlabeled ones in fusion regimes).
struct EifSample {
  Regime regime = Regime::no_shift;
  Matrix values;
};

struct Diagnostics {
  int max_solver_iterations = 0;
  long total_solver_iterations = 0;
  int clipped_outcome = 0;
  int clipped_propensity = 0;
  int clipped_ratio = 0;
  std::vector<std::uint64_t> fold_seeds;
  std::size_t records = 0;
};

struct EstimateReport {
  Estimand estimand = Estimand::phi;
  Regime regime = Regime::no_shift;
  bool fusion = false;
  StrengthVector point;
  StrengthVector plug_in;
  /// Sample mean of the estimated correction term; point = plug_in + correction.
  StrengthVector correction;
  /// Asymptotic covariance divided by the sample size.
  Matrix covariance;
  double level = 0.95;
  std::vector<Interval> wald;
  EifSample influence;
  Diagnostics diagnostics;

  Vector std_errors() const { return covariance.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

}  // namespace btshift
