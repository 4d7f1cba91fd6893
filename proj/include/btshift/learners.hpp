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

// Small regression learners for conditional means of [0,1]-valued targets.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "btshift/core.hpp"
#include "btshift/numeric.hpp"

namespace btshift {

enum class LearnerKind { logistic_basis, knn, constant_mean, cell_mean, stack };

inline const char* to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::logistic_basis: return "logistic_basis";
    case LearnerKind::knn: return "knn";
    case LearnerKind::constant_mean: return "constant_mean";
    case LearnerKind::cell_mean: return "cell_mean";
    case LearnerKind::stack: return "stack";
  }
  return "unknown";
}

inline LearnerKind learner_kind_from_string(const std::string& s) {
  for (auto k : {LearnerKind::logistic_basis, LearnerKind::knn, LearnerKind::constant_mean,
                 LearnerKind::cell_mean, LearnerKind::stack}) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorKind::config, "unknown learner kind '" + s + "'");
}

struct LearnerSpec {
  LearnerKind kind = LearnerKind::logistic_basis;
  int degree = 1;
  bool interactions = false;
  int max_power = 0;  // per-covariate power cap; 0 means `degree`
  double ridge = 1e-4;
  int neighbors = 50;  // 0: round(sqrt(training size))
  int inner_folds = 3;
  std::vector<LearnerSpec> library;  // stack only

  void validate() const {
    switch (kind) {
      case LearnerKind::logistic_basis:
        if (degree < 1 || degree > 3) {
          throw Error(ErrorKind::config, "logistic_basis degree must be 1, 2 or 3");
        }
        if (ridge < 0.0) throw Error(ErrorKind::config, "ridge must be >= 0");
        if (max_power < 0) throw Error(ErrorKind::config, "max_power must be >= 0");
        break;
      case LearnerKind::knn:
        if (neighbors < 0) throw Error(ErrorKind::config, "knn neighbors must be >= 0");
        break;
      case LearnerKind::stack:
        if (library.empty()) throw Error(ErrorKind::config, "stack needs a learner library");
        if (inner_folds < 2) throw Error(ErrorKind::config, "stack needs >= 2 inner folds");
        for (const auto& s : library) {
          if (s.kind == LearnerKind::stack) {
            throw Error(ErrorKind::config, "nested stacks are not supported");
          }
          s.validate();
        }
        break;
      default:
        break;
    }
  }

  static LearnerSpec logistic(int degree, bool interactions) {
    LearnerSpec s;
    s.degree = degree;
    s.interactions = interactions;
    return s;
  }
  static LearnerSpec constant() {
    LearnerSpec s;
    s.kind = LearnerKind::constant_mean;
    return s;
  }
};

class FittedLearner {
 public:
  virtual ~FittedLearner() = default;
  virtual Vector predict(const Matrix& X) const = 0;
};

using LearnerPtr = std::shared_ptr<const FittedLearner>;

/// Polynomial basis with optional cross-covariate products. Binary columns
/// enter with power at most one; terms constant on the training set are
/// dropped; every term is standardized with training moments.
class BasisExpansion {
 public:
  BasisExpansion(const Matrix& X, int degree, bool interactions, int max_power = 0) {
    const int cap = max_power > 0 ? std::min(max_power, degree) : degree;
    const int d = static_cast<int>(X.cols());
    col_mean_ = Vector::Zero(d);
    col_scale_ = Vector::Ones(d);
    std::vector<int> powers_cap(d, 0);
    for (int c = 0; c < d; ++c) {
      const auto col = X.col(c);
      const bool binary = (col.array() == 0.0 || col.array() == 1.0).all();
      const double mean = col.mean();
      const double sd = std::sqrt((col.array() - mean).square().mean());
      if (sd <= 0.0) continue;
      powers_cap[c] = binary ? 1 : cap;
      if (!binary) {
        col_mean_[c] = mean;
        col_scale_[c] = sd;
      }
    }
    std::vector<int> powers(d, 0);
    enumerate(0, degree, interactions, powers_cap, powers);
    const Matrix raw = raw_terms(X);
    std::vector<std::vector<int>> kept;
    std::vector<double> means, scales;
    for (int t = 0; t < raw.cols(); ++t) {
      const double mean = raw.col(t).mean();
      const double sd = std::sqrt((raw.col(t).array() - mean).square().mean());
      if (sd > 1e-10) {
        kept.push_back(terms_[t]);
        means.push_back(mean);
        scales.push_back(sd);
      }
    }
    terms_ = kept;
    term_mean_ = Eigen::Map<Vector>(means.data(), static_cast<Eigen::Index>(means.size()));
    term_scale_ = Eigen::Map<Vector>(scales.data(), static_cast<Eigen::Index>(scales.size()));
  }

  int size() const { return static_cast<int>(terms_.size()); }

  /// Design with a leading intercept column.
  Matrix design(const Matrix& X) const {
    const Matrix raw = raw_terms(X);
    Matrix Z(X.rows(), size() + 1);
    Z.col(0).setOnes();
    for (int t = 0; t < size(); ++t) {
      Z.col(t + 1) = (raw.col(t).array() - term_mean_[t]) / term_scale_[t];
    }
    return Z;
  }

 private:
  void enumerate(int c, int budget, bool interactions, const std::vector<int>& max_power,
                 std::vector<int>& powers) {
    if (c == static_cast<int>(powers.size())) {
      int total = 0, used = 0;
      for (int p : powers) {
        total += p;
        used += p > 0;
      }
      if (total > 0 && (interactions || used == 1)) terms_.push_back(powers);
      return;
    }
    for (int p = 0; p <= std::min(budget, max_power[c]); ++p) {
      powers[c] = p;
      enumerate(c + 1, budget - p, interactions, max_power, powers);
    }
    powers[c] = 0;
  }

  Matrix raw_terms(const Matrix& X) const {
    Matrix out = Matrix::Ones(X.rows(), static_cast<Eigen::Index>(terms_.size()));
    for (std::size_t t = 0; t < terms_.size(); ++t) {
      for (std::size_t c = 0; c < terms_[t].size(); ++c) {
        const int p = terms_[t][c];
        if (p == 0) continue;
        const auto z = (X.col(c).array() - col_mean_[c]) / col_scale_[c];
        for (int e = 0; e < p; ++e) out.col(t).array() *= z;
      }
    }
    return out;
  }

  std::vector<std::vector<int>> terms_;
  Vector col_mean_, col_scale_, term_mean_, term_scale_;
};

namespace detail {

/// Penalized Bernoulli quasi-likelihood by Newton-Raphson (IRLS); y may be
/// fractional. The intercept is not penalized.
inline Vector fit_logistic(const Matrix& Z, const Vector& y, double ridge) {
  const auto p = Z.cols();
  Vector beta = Vector::Zero(p);
  const double ybar = clip(y.mean(), 1e-6, 1.0 - 1e-6);
  beta[0] = logit(ybar);
  Vector pen = Vector::Constant(p, ridge);
  pen[0] = 0.0;
  auto objective = [&](const Vector& b) {
    const Vector eta = Z * b;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double t = eta[i];
      // log(1 + e^t), stable
      const double softplus = t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
      ll += y[i] * t - softplus;
    }
    return ll - 0.5 * (pen.array() * b.array().square()).sum();
  };
  double obj = objective(beta);
  for (int it = 0; it < 100; ++it) {
    const Vector eta = Z * beta;
    Vector mu(eta.size()), w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      mu[i] = sigmoid(eta[i]);
      w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-12);
    }
    const Vector grad = Z.transpose() * (y - mu) - pen.cwiseProduct(beta);
    Matrix H = Z.transpose() * w.asDiagonal() * Z;
    H.diagonal() += pen;
    H.diagonal().array() += 1e-10;
    const Vector step = H.ldlt().solve(grad);
    double t = 1.0;
    Vector next = beta + step;
    double next_obj = objective(next);
    while (!(next_obj >= obj) && t > 1e-8) {
      t *= 0.5;
      next = beta + t * step;
      next_obj = objective(next);
    }
    if (!(next_obj >= obj)) break;
    const double change = (t * step).lpNorm<Eigen::Infinity>();
    beta = next;
    const double gain = next_obj - obj;
    obj = next_obj;
    if (change < 1e-8 || gain < 1e-12 * (1.0 + std::abs(obj))) break;
  }
  return beta;
}

class LogisticBasisModel : public FittedLearner {
 public:
  LogisticBasisModel(const Matrix& X, const Vector& y, const LearnerSpec& spec)
      : basis_(X, spec.degree, spec.interactions, spec.max_power) {
    beta_ = fit_logistic(basis_.design(X), y, spec.ridge);
  }
  Vector predict(const Matrix& X) const override {
    const Vector eta = basis_.design(X) * beta_;
    return eta.unaryExpr([](double t) { return sigmoid(t); });
  }

 private:
  BasisExpansion basis_;
  Vector beta_;
};

class ConstantModel : public FittedLearner {
 public:
  explicit ConstantModel(double value) : value_(value) {}
  Vector predict(const Matrix& X) const override { return Vector::Constant(X.rows(), value_); }

 private:
  double value_;
};

class KnnModel : public FittedLearner {
 public:
  KnnModel(const Matrix& X, const Vector& y, int k) : y_(y), k_(std::min<int>(k, static_cast<int>(y.size()))) {
    mean_ = X.colwise().mean().transpose();
    scale_ = ((X.rowwise() - mean_.transpose()).array().square().colwise().mean()).sqrt().transpose();
    for (Eigen::Index c = 0; c < scale_.size(); ++c) {
      if (scale_[c] <= 0.0) scale_[c] = 1.0;
    }
    Xs_ = standardize(X);
  }
  Vector predict(const Matrix& X) const override {
    const Matrix Q = standardize(X);
    Vector out(Q.rows());
    std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(Xs_.rows()));
    for (Eigen::Index q = 0; q < Q.rows(); ++q) {
      for (Eigen::Index i = 0; i < Xs_.rows(); ++i) {
        dist[static_cast<std::size_t>(i)] = {(Xs_.row(i) - Q.row(q)).squaredNorm(), i};
      }
      std::nth_element(dist.begin(), dist.begin() + (k_ - 1), dist.end());
      double s = 0.0;
      for (int j = 0; j < k_; ++j) s += y_[dist[static_cast<std::size_t>(j)].second];
      out[q] = s / k_;
    }
    return out;
  }

 private:
  Matrix standardize(const Matrix& X) const {
    return (X.rowwise() - mean_.transpose()).array().rowwise() / scale_.transpose().array();
  }
  Matrix Xs_;
  Vector y_, mean_, scale_;
  int k_;
};

/// Mean of y within cells of identical covariate vectors; unseen cells fall
/// back to the overall mean.
class CellMeanModel : public FittedLearner {
 public:
  CellMeanModel(const Matrix& X, const Vector& y) : overall_(y.mean()) {
    std::map<std::vector<double>, std::pair<double, int>> acc;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      auto& a = acc[key(X, i)];
      a.first += y[i];
      a.second += 1;
    }
    for (const auto& [k, v] : acc) cells_[k] = v.first / v.second;
  }
  Vector predict(const Matrix& X) const override {
    Vector out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      auto it = cells_.find(key(X, i));
      out[i] = it == cells_.end() ? overall_ : it->second;
    }
    return out;
  }
  static std::vector<double> key(const Matrix& X, Eigen::Index i) {
    std::vector<double> v(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index c = 0; c < X.cols(); ++c) v[static_cast<std::size_t>(c)] = X(i, c);
    return v;
  }

 private:
  double overall_;
  std::map<std::vector<double>, double> cells_;
};

/// Lawson-Hanson non-negative least squares: min ||A w - b|| s.t. w >= 0.
inline Vector nnls(const Matrix& A, const Vector& b, int max_iter = 500) {
  const auto p = A.cols();
  Vector w = Vector::Zero(p);
  std::vector<bool> passive(static_cast<std::size_t>(p), false);
  const double tol = 1e-12 * std::max(1.0, A.cwiseAbs().maxCoeff());
  for (int outer = 0; outer < max_iter; ++outer) {
    const Vector grad = A.transpose() * (b - A * w);
    Eigen::Index best = -1;
    double best_val = tol;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (!passive[static_cast<std::size_t>(j)] && grad[j] > best_val) {
        best_val = grad[j];
        best = j;
      }
    }
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = true;
    for (int inner = 0; inner < max_iter; ++inner) {
      std::vector<Eigen::Index> idx;
      for (Eigen::Index j = 0; j < p; ++j) {
        if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
      }
      Matrix Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
      for (std::size_t j = 0; j < idx.size(); ++j) Ap.col(static_cast<Eigen::Index>(j)) = A.col(idx[j]);
      const Vector zp = Ap.colPivHouseholderQr().solve(b);
      Vector z = Vector::Zero(p);
      for (std::size_t j = 0; j < idx.size(); ++j) z[idx[j]] = zp[static_cast<Eigen::Index>(j)];
      bool feasible = true;
      for (auto j : idx) feasible = feasible && z[j] > 0.0;
      if (feasible) {
        w = z;
        break;
      }
      double alpha = 1.0;
      for (auto j : idx) {
        if (z[j] <= 0.0) alpha = std::min(alpha, w[j] / (w[j] - z[j]));
      }
      w += alpha * (z - w);
      for (auto j : idx) {
        if (w[j] <= 1e-15) {
          w[j] = 0.0;
          passive[static_cast<std::size_t>(j)] = false;
        }
      }
    }
  }
  return w;
}

}  // namespace detail

LearnerPtr fit_learner(const LearnerSpec& spec, const Matrix& X, const Vector& y,
                       std::uint64_t seed = 0);

namespace detail {

class StackModel : public FittedLearner {
 public:
  StackModel(const LearnerSpec& spec, const Matrix& X, const Vector& y, std::uint64_t seed) {
    const auto n = X.rows();
    const auto B = static_cast<Eigen::Index>(spec.library.size());
    const int V = std::min<int>(spec.inner_folds, static_cast<int>(n));
    std::vector<int> fold(static_cast<std::size_t>(n));
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, 0x57AC));
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index r = 0; r < n; ++r) fold[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = static_cast<int>(r % V);
    Matrix oof(n, B);
    for (int v = 0; v < V; ++v) {
      std::vector<Eigen::Index> tr, te;
      for (Eigen::Index i = 0; i < n; ++i) (fold[static_cast<std::size_t>(i)] == v ? te : tr).push_back(i);
      if (tr.empty() || te.empty()) continue;
      const Matrix Xtr = X(tr, Eigen::all), Xte = X(te, Eigen::all);
      const Vector ytr = y(tr);
      for (Eigen::Index b = 0; b < B; ++b) {
        const Vector pred = fit_learner(spec.library[static_cast<std::size_t>(b)], Xtr, ytr,
                                        mix_seed(seed, static_cast<std::uint64_t>(v * 31 + b)))
                                ->predict(Xte);
        for (std::size_t t = 0; t < te.size(); ++t) oof(te[t], b) = pred[static_cast<Eigen::Index>(t)];
      }
    }
    weights_ = nnls(oof, y);
    const double total = weights_.sum();
    if (total > 0.0) {
      weights_ /= total;
    } else {
      weights_ = Vector::Constant(B, 1.0 / static_cast<double>(B));
    }
    for (Eigen::Index b = 0; b < B; ++b) {
      if (weights_[b] > 0.0) {
        members_.push_back({weights_[b], fit_learner(spec.library[static_cast<std::size_t>(b)], X, y,
                                                     mix_seed(seed, 1000 + static_cast<std::uint64_t>(b)))});
      }
    }
  }
  Vector predict(const Matrix& X) const override {
    Vector out = Vector::Zero(X.rows());
    for (const auto& [w, model] : members_) out += w * model->predict(X);
    return out;
  }
  const Vector& weights() const { return weights_; }

 private:
  Vector weights_;
  std::vector<std::pair<double, LearnerPtr>> members_;
};

}  // namespace detail

inline LearnerPtr fit_learner(const LearnerSpec& spec, const Matrix& X, const Vector& y,
                              std::uint64_t seed) {
  spec.validate();
  if (X.rows() == 0) throw Error(ErrorKind::data, "cannot fit a learner on an empty training set");
  switch (spec.kind) {
    case LearnerKind::logistic_basis:
      return std::make_shared<detail::LogisticBasisModel>(X, y, spec);
    case LearnerKind::knn:
      return std::make_shared<detail::KnnModel>(
          X, y, spec.neighbors > 0 ? spec.neighbors
                                   : std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(X.rows()))))));
    case LearnerKind::constant_mean:
      return std::make_shared<detail::ConstantModel>(y.mean());
    case LearnerKind::cell_mean:
      return std::make_shared<detail::CellMeanModel>(X, y);
    case LearnerKind::stack:
      return std::make_shared<detail::StackModel>(spec, X, y, seed);
  }
  throw Error(ErrorKind::config, "unknown learner kind");
}

}  // namespace btshift
