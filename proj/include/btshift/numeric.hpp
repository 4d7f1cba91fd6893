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

#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <cstdint>
#include <utility>

#include "btshift/core.hpp"

namespace btshift {

inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

/// sigma'(t) = sigma(t)(1 - sigma(t)).
inline double sigmoid_slope(double t) {
  const double s = sigmoid(t);
  return s * (1.0 - s);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double clip(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(ErrorKind::invalid_argument, "quantile level must be in (0,1)");
  }
  return boost::math::quantile(boost::math::normal(), p);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

struct QuadratureRule {
  Vector nodes;
  Vector weights;
};

/// Gauss-Hermite rule for E[f(Z)], Z ~ N(mean, sd^2) (probabilists' weights
/// summing to 1), via the Golub-Welsch eigenproblem.
inline QuadratureRule gauss_hermite_normal(int order, double mean, double sd) {
  if (order < 1) throw Error(ErrorKind::invalid_argument, "quadrature order must be >= 1");
  Matrix J = Matrix::Zero(order, order);
  for (int i = 1; i < order; ++i) {
    J(i, i - 1) = J(i - 1, i) = std::sqrt(static_cast<double>(i));
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(J);
  QuadratureRule rule;
  rule.nodes = mean + sd * eig.eigenvalues().array();
  rule.weights = eig.eigenvectors().row(0).array().square();
  return rule;
}

/// Gauss-Legendre rule for E[f(U)], U ~ Uniform(a, b) (weights sum to 1).
inline QuadratureRule gauss_legendre_uniform(int order, double a, double b) {
  if (order < 1) throw Error(ErrorKind::invalid_argument, "quadrature order must be >= 1");
  Matrix J = Matrix::Zero(order, order);
  for (int i = 1; i < order; ++i) {
    const double d = static_cast<double>(i);
    J(i, i - 1) = J(i - 1, i) = d / std::sqrt(4.0 * d * d - 1.0);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(J);
  QuadratureRule rule;
  rule.nodes = 0.5 * (a + b) + 0.5 * (b - a) * eig.eigenvalues().array();
  rule.weights = eig.eigenvectors().row(0).array().square();
  return rule;
}

/// splitmix64 finalizer; used to derive independent stream seeds from
/// (master seed, counter).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t counter) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (counter + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Sample mean and covariance (divisor n - 1) of the rows of `values`.
inline std::pair<Vector, Matrix> row_moments(const Matrix& values) {
  const auto n = values.rows();
  Vector mean = values.colwise().mean().transpose();
  if (n < 2) return {mean, Matrix::Zero(values.cols(), values.cols())};
  const Matrix centered = values.rowwise() - mean.transpose();
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  return {mean, 0.5 * (cov + cov.transpose())};
}

}  // namespace btshift
