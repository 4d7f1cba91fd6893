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

#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "btshift/core.hpp"
#include "btshift/numeric.hpp"

namespace btshift {
namespace {

TEST(PairIndex, LexicographicForThreePlayers) {
  EXPECT_EQ(pair_to_index({1, 2}, 3), 0);
  EXPECT_EQ(pair_to_index({1, 3}, 3), 1);
  EXPECT_EQ(pair_to_index({2, 3}, 3), 2);
}

TEST(PairIndex, RoundTripsForManyPlayerCounts) {
  for (int K = 2; K <= 9; ++K) {
    int expect = 0;
    for (int k = 1; k <= K; ++k) {
      for (int l = k + 1; l <= K; ++l) {
        ASSERT_EQ(pair_to_index({k, l}, K), expect);
        ASSERT_EQ(index_to_pair(expect, K), (Pair{k, l}));
        ++expect;
      }
    }
    EXPECT_EQ(expect, pair_count(K));
  }
}

TEST(PairIndex, RejectsBadPairs) {
  for (Pair p : {Pair{2, 1}, Pair{0, 2}, Pair{1, 5}, Pair{3, 3}}) {
    try {
      pair_to_index(p, 4);
      FAIL() << "accepted " << to_string(p);
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::invalid_pair);
    }
  }
  EXPECT_THROW(index_to_pair(6, 4), Error);
  EXPECT_THROW(check_players(1), Error);
}

TEST(FullSlot, MatchesRowMajorOrderWithoutDiagonal) {
  // K = 3 rows k = 2, 3; columns l != k.
  EXPECT_EQ(full_slot(2, 1, 3), 0);
  EXPECT_EQ(full_slot(2, 3, 3), 1);
  EXPECT_EQ(full_slot(3, 1, 3), 2);
  EXPECT_EQ(full_slot(3, 2, 3), 3);
  std::set<int> seen;
  for (int k = 2; k <= 6; ++k) {
    for (int l = 1; l <= 6; ++l) {
      if (l != k) seen.insert(full_slot(k, l, 6));
    }
  }
  EXPECT_EQ(seen.size(), 25u);
  EXPECT_EQ(*seen.rbegin(), 24);
}

TEST(WinProbVector, ComplementRule) {
  const WinProbVector m(3, (Vector(3) << 0.6, 0.7, 0.4).finished());
  EXPECT_DOUBLE_EQ(m(2, 1), 0.4);
  EXPECT_DOUBLE_EQ(m(3, 1), 0.3);
  EXPECT_DOUBLE_EQ(m(3, 2), 0.6);
  EXPECT_DOUBLE_EQ(m(2, 3), 0.4);
  const WinProbVector half(2, Vector::Constant(1, 0.5));
  EXPECT_DOUBLE_EQ(half(2, 1), 0.5);
}

TEST(WinProbVector, FreeValuesRoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  Vector v(10);
  for (auto& e : v) e = u(rng);
  EXPECT_EQ(winvec_from_free(5, v).free(), v);
}

TEST(WinProbVector, FullLayoutHoldsRowsOfNonReferencePlayers) {
  const WinProbVector m(3, (Vector(3) << 0.6, 0.7, 0.4).finished());
  const Vector f = m.full();
  ASSERT_EQ(f.size(), 4);
  EXPECT_DOUBLE_EQ(f[full_slot(2, 1, 3)], 0.4);
  EXPECT_DOUBLE_EQ(f[full_slot(2, 3, 3)], 0.4);
  EXPECT_DOUBLE_EQ(f[full_slot(3, 1, 3)], 0.3);
  EXPECT_DOUBLE_EQ(f[full_slot(3, 2, 3)], 0.6);
}

TEST(WinProbVector, RejectsBoundaryAndNonFinite) {
  for (double bad : {0.0, 1.0, -0.1, std::nan("")}) {
    EXPECT_THROW(WinProbVector(2, Vector::Constant(1, bad)), Error);
  }
  EXPECT_THROW(WinProbVector(3, Vector::Constant(2, 0.5)), Error);
}

TEST(PairwiseScheme, UniformAndDisconnected) {
  const auto u = PairwiseScheme::uniform(4);
  EXPECT_NEAR(u.rho().sum(), 1.0, 1e-15);
  Vector rho = Vector::Zero(6);
  rho[pair_to_index({1, 2}, 4)] = 1.0;
  rho[pair_to_index({3, 4}, 4)] = 1.0;
  try {
    PairwiseScheme(4, rho);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::identification);
  }
  rho[pair_to_index({2, 3}, 4)] = 0.5;
  EXPECT_NO_THROW(PairwiseScheme(4, rho));
  rho[0] = -1.0;
  EXPECT_THROW(PairwiseScheme(4, rho), Error);
}

TEST(Dataset, ValidateCatchesBadRecords) {
  ComparisonDataset d;
  d.players = 3;
  d.dimension = 1;
  EXPECT_THROW(d.validate(), Error);
  d.labeled.push_back({{0.1}, {1, 2}, 1.0});
  EXPECT_NO_THROW(d.validate());
  d.labeled.push_back({{0.1}, {1, 2}, 1.5});
  EXPECT_THROW(d.validate(), Error);
  d.labeled.back().y = 0.5;
  d.labeled.back().pair = {2, 1};
  EXPECT_THROW(d.validate(), Error);
  d.labeled.back().pair = {2, 3};
  d.unlabeled = std::vector<std::vector<double>>{{0.2, 0.3}};
  EXPECT_THROW(d.validate(), Error);
  (*d.unlabeled)[0] = {0.2};
  EXPECT_NO_THROW(d.validate());
  EXPECT_EQ(d.total(), 3u);
  EXPECT_EQ(d.design()(2, 0), 0.2);
}

// Inverse of an erf-based normal CDF by bisection.
double quantile_by_bisection(double p) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * (1.0 + std::erf(mid / std::sqrt(2.0))) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

TEST(Numeric, NormalQuantileMatchesErfOracle) {
  EXPECT_NEAR(normal_quantile(0.975), 1.959964, 5e-7);
  for (double p : {0.001, 0.05, 0.3, 0.5, 0.8, 0.995}) {
    EXPECT_NEAR(normal_quantile(p), quantile_by_bisection(p), 1e-9);
  }
  EXPECT_THROW(normal_quantile(1.0), Error);
}

TEST(Numeric, SigmoidAndLogitAreInverse) {
  for (double t : {-30.0, -2.0, 0.0, 0.3, 12.0}) {
    EXPECT_NEAR(logit(sigmoid(t)), t, 1e-9 * (1.0 + std::abs(t)));
    EXPECT_NEAR(sigmoid_slope(t), sigmoid(t) * (1.0 - sigmoid(t)), 1e-15);
  }
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
}

TEST(Numeric, QuadratureRulesIntegratePolynomials) {
  const auto gh = gauss_hermite_normal(20, 0.0, 0.5);
  double m2 = 0.0, m4 = 0.0, w = 0.0;
  for (Eigen::Index i = 0; i < gh.nodes.size(); ++i) {
    w += gh.weights[i];
    m2 += gh.weights[i] * std::pow(gh.nodes[i], 2);
    m4 += gh.weights[i] * std::pow(gh.nodes[i], 4);
  }
  EXPECT_NEAR(w, 1.0, 1e-13);
  EXPECT_NEAR(m2, 0.25, 1e-13);
  EXPECT_NEAR(m4, 3.0 * 0.0625, 1e-13);
  const auto gl = gauss_legendre_uniform(10, 0.0, 0.5);
  double mean = 0.0, cube = 0.0;
  for (Eigen::Index i = 0; i < gl.nodes.size(); ++i) {
    mean += gl.weights[i] * gl.nodes[i];
    cube += gl.weights[i] * std::pow(gl.nodes[i], 3);
  }
  EXPECT_NEAR(mean, 0.25, 1e-14);
  EXPECT_NEAR(cube, std::pow(0.5, 3) / 4.0, 1e-14);
}

TEST(Numeric, MixSeedIsDeterministicAndSpreads) {
  EXPECT_EQ(mix_seed(7, 3), mix_seed(7, 3));
  std::set<std::uint64_t> s;
  for (std::uint64_t c = 0; c < 1000; ++c) s.insert(mix_seed(11, c));
  EXPECT_EQ(s.size(), 1000u);
}

TEST(Numeric, RowMomentsMatchLoops) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  Matrix X(40, 3);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = z(rng);
  const auto [mean, cov] = row_moments(X);
  for (int a = 0; a < 3; ++a) {
    double ma = 0.0;
    for (int i = 0; i < 40; ++i) ma += X(i, a) / 40.0;
    EXPECT_NEAR(mean[a], ma, 1e-14);
    for (int b = 0; b < 3; ++b) {
      double mb = 0.0, s = 0.0;
      for (int i = 0; i < 40; ++i) mb += X(i, b) / 40.0;
      for (int i = 0; i < 40; ++i) s += (X(i, a) - ma) * (X(i, b) - mb);
      EXPECT_NEAR(cov(a, b), s / 39.0, 1e-13);
    }
  }
}

}  // namespace
}  // namespace btshift
