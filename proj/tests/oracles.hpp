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

// Independent reference implementations used as test oracles. Written with
// plain loops over (k, l) and std::vector; nothing here calls into btshift
// numerics, so agreement with the library is a genuine cross-check.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline double sig(double t) { return 1.0 / (1.0 + std::exp(-t)); }

/// Gaussian elimination with partial pivoting.
inline Vec solve(Mat A, Vec b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
    }
    if (std::abs(A[piv][c]) < 1e-300) throw std::runtime_error("singular");
    std::swap(A[c], A[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = A[r][c] / A[c][c];
      for (std::size_t k = c; k < n; ++k) A[r][k] -= f * A[c][k];
      b[r] -= f * b[c];
    }
  }
  Vec x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= A[i][k] * x[k];
    x[i] = s / A[i][i];
  }
  return x;
}

/// Numeric rank by row reduction with a relative pivot threshold.
inline int rank(Mat A, double tol = 1e-9) {
  if (A.empty()) return 0;
  const std::size_t rows = A.size(), cols = A[0].size();
  int r = 0;
  for (std::size_t c = 0; c < cols && r < static_cast<int>(rows); ++c) {
    std::size_t piv = static_cast<std::size_t>(r);
    for (std::size_t i = static_cast<std::size_t>(r); i < rows; ++i) {
      if (std::abs(A[i][c]) > std::abs(A[piv][c])) piv = i;
    }
    if (std::abs(A[piv][c]) < tol) continue;
    std::swap(A[piv], A[static_cast<std::size_t>(r)]);
    for (std::size_t i = 0; i < rows; ++i) {
      if (i == static_cast<std::size_t>(r)) continue;
      const double f = A[i][c] / A[static_cast<std::size_t>(r)][c];
      for (std::size_t k = c; k < cols; ++k) A[i][k] -= f * A[static_cast<std::size_t>(r)][k];
    }
    ++r;
  }
  return r;
}

/// Unordered pairs in lexicographic order, 1-based players.
inline std::vector<std::pair<int, int>> pairs_of(int K) {
  std::vector<std::pair<int, int>> out;
  for (int k = 1; k <= K; ++k) {
    for (int l = k + 1; l <= K; ++l) out.push_back({k, l});
  }
  return out;
}

/// Symmetric table over ordered pairs built from values for k < l.
struct PairTable {
  int K = 2;
  std::map<std::pair<int, int>, double> v;
  PairTable() = default;
  PairTable(int players, const Vec& free, bool complement) : K(players) {
    const auto ps = pairs_of(K);
    for (std::size_t j = 0; j < ps.size(); ++j) {
      v[ps[j]] = free[j];
      v[{ps[j].second, ps[j].first}] = complement ? 1.0 - free[j] : free[j];
    }
  }
  double operator()(int k, int l) const { return v.at({k, l}); }
};

/// theta with theta[0] = theta_1 = 0 (length K).
inline Vec U(int K, const Vec& th, const PairTable& m, const PairTable& rho) {
  Vec out;
  for (int k = 2; k <= K; ++k) {
    double s = 0.0;
    for (int l = 1; l <= K; ++l) {
      if (l != k) s += rho(k, l) * (sig(th[k - 1] - th[l - 1]) - m(k, l));
    }
    out.push_back(s);
  }
  return out;
}

inline Mat dU_dtheta(int K, const Vec& th, const PairTable& rho) {
  Mat H(K - 1, Vec(K - 1, 0.0));
  for (int k = 2; k <= K; ++k) {
    for (int l = 1; l <= K; ++l) {
      if (l == k) continue;
      const double s = sig(th[k - 1] - th[l - 1]);
      const double g = rho(k, l) * s * (1.0 - s);
      H[k - 2][k - 2] += g;
      if (l >= 2) H[k - 2][l - 2] -= g;
    }
  }
  return H;
}

/// Newton solve of U = 0; returns (theta_2..theta_K).
inline Vec project(int K, const Vec& mfree, const Vec& rhofree) {
  const PairTable m(K, mfree, true), rho(K, rhofree, false);
  Vec th(K, 0.0);
  for (int it = 0; it < 200; ++it) {
    const Vec u = U(K, th, m, rho);
    double r = 0.0;
    for (double x : u) r = std::max(r, std::abs(x));
    if (r < 1e-15) break;
    const Vec step = solve(dU_dtheta(K, th, rho), u);
    for (int k = 2; k <= K; ++k) th[k - 1] -= step[k - 2];
  }
  return Vec(th.begin() + 1, th.end());
}

/// Apply Lambda = (dU/dtheta)^{-1}(dU/dm) to a vector c indexed by ordered
/// pairs (k >= 2, l != k): (dU/dm c)_k = -sum_l rho_kl c_kl.
inline Vec lambda_apply(int K, const Vec& th_short, const Vec& rhofree,
                        const std::map<std::pair<int, int>, double>& c) {
  const PairTable rho(K, rhofree, false);
  Vec th(1, 0.0);
  th.insert(th.end(), th_short.begin(), th_short.end());
  Vec b;
  for (int k = 2; k <= K; ++k) {
    double s = 0.0;
    for (int l = 1; l <= K; ++l) {
      if (l == k) continue;
      auto it = c.find({k, l});
      if (it != c.end()) s -= rho(k, l) * it->second;
    }
    b.push_back(s);
  }
  return solve(dU_dtheta(K, th, rho), b);
}

/// tau_kl = (-1)^{1{k<l}+1} 1{a = (min, max)} (y - m_a) / pi_a for all k != l.
inline std::map<std::pair<int, int>, double> tau(int K, std::pair<int, int> a, double y,
                                                 const PairTable& m, double pi_a) {
  std::map<std::pair<int, int>, double> t;
  for (int k = 1; k <= K; ++k) {
    for (int l = 1; l <= K; ++l) {
      if (k == l) continue;
      const bool hit = std::min(k, l) == a.first && std::max(k, l) == a.second;
      const double sign = (k < l) ? 1.0 : -1.0;
      t[{k, l}] = hit ? sign * (y - m(a.first, a.second)) / pi_a : 0.0;
    }
  }
  return t;
}

/// Raw inputs: per-record nuisance rows in lexicographic pair order.
struct Instance {
  int K = 3;
  int n = 0;  // labeled records are 0..n-1
  int N = 0;  // total records
  std::vector<std::pair<int, int>> a;  // labeled pairs
  Vec y;
  Mat mhat;   // N x P
  Mat pihat;  // N x P
  Vec what;   // N (fusion) or empty
  Vec rho;    // P
};

inline int index_of(int K, std::pair<int, int> a) {
  const auto ps = pairs_of(K);
  return static_cast<int>(std::find(ps.begin(), ps.end(), a) - ps.begin());
}

inline Vec add(Vec a, const Vec& b, double s = 1.0) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
  return a;
}

/// phi-hat = n^-1 sum { theta-hat(X_i) - Lambda-hat tau-hat }.
inline Vec phi(const Instance& d) {
  Vec acc(d.K - 1, 0.0);
  for (int i = 0; i < d.n; ++i) {
    const Vec th = project(d.K, d.mhat[i], d.rho);
    const PairTable m(d.K, d.mhat[i], true);
    const auto t = tau(d.K, d.a[i], d.y[i], m, d.pihat[i][index_of(d.K, d.a[i])]);
    acc = add(acc, add(th, lambda_apply(d.K, th, d.rho, t), -1.0));
  }
  for (double& v : acc) v /= d.n;
  return acc;
}

inline Vec known_ratio(const Instance& d, const Vec& w) {
  double ws = 0.0;
  for (int i = 0; i < d.n; ++i) ws += w[i];
  Vec acc(d.K - 1, 0.0);
  for (int i = 0; i < d.n; ++i) {
    const Vec th = project(d.K, d.mhat[i], d.rho);
    const PairTable m(d.K, d.mhat[i], true);
    const auto t = tau(d.K, d.a[i], d.y[i], m, d.pihat[i][index_of(d.K, d.a[i])]);
    acc = add(acc, add(th, lambda_apply(d.K, th, d.rho, t), -1.0), w[i] / ws);
  }
  return acc;
}

/// psi-hat = psi-tilde - n^-1 sum Lambda(psi-tilde){tau + m(X_i) - m-bar}.
inline Vec psi(const Instance& d) {
  const int P = static_cast<int>(d.rho.size());
  Vec mbar(P, 0.0);
  for (int i = 0; i < d.n; ++i) mbar = add(mbar, d.mhat[i], 1.0 / d.n);
  const Vec pt = project(d.K, mbar, d.rho);
  const PairTable mb(d.K, mbar, true);
  Vec acc = pt;
  for (int i = 0; i < d.n; ++i) {
    const PairTable m(d.K, d.mhat[i], true);
    auto t = tau(d.K, d.a[i], d.y[i], m, d.pihat[i][index_of(d.K, d.a[i])]);
    for (auto& [kl, v] : t) v += m(kl.first, kl.second) - mb(kl.first, kl.second);
    acc = add(acc, lambda_apply(d.K, pt, d.rho, t), -1.0 / d.n);
  }
  return acc;
}

/// N^-1 sum [-(S/S-bar) w Lambda tau + ((1-S)/(1-S-bar)) theta-hat].
inline Vec phi_fusion(const Instance& d) {
  const double sbar = static_cast<double>(d.n) / d.N;
  Vec acc(d.K - 1, 0.0);
  for (int i = 0; i < d.N; ++i) {
    const double S = i < d.n ? 1.0 : 0.0;
    const Vec th = project(d.K, d.mhat[i], d.rho);
    if (S == 1.0) {
      const PairTable m(d.K, d.mhat[i], true);
      const auto t = tau(d.K, d.a[i], d.y[i], m, d.pihat[i][index_of(d.K, d.a[i])]);
      acc = add(acc, lambda_apply(d.K, th, d.rho, t), -(S / sbar) * d.what[i] / d.N);
    } else {
      acc = add(acc, th, ((1.0 - S) / (1.0 - sbar)) / d.N);
    }
  }
  return acc;
}

inline Vec psi_fusion(const Instance& d) {
  const int P = static_cast<int>(d.rho.size());
  const double sbar = static_cast<double>(d.n) / d.N;
  Vec mbar(P, 0.0);
  for (int i = d.n; i < d.N; ++i) mbar = add(mbar, d.mhat[i], 1.0 / (d.N - d.n));
  const Vec pt = project(d.K, mbar, d.rho);
  const PairTable mb(d.K, mbar, true);
  Vec acc = pt;
  for (int i = 0; i < d.N; ++i) {
    const double S = i < d.n ? 1.0 : 0.0;
    const PairTable m(d.K, d.mhat[i], true);
    std::map<std::pair<int, int>, double> c;
    if (S == 1.0) {
      c = tau(d.K, d.a[i], d.y[i], m, d.pihat[i][index_of(d.K, d.a[i])]);
      for (auto& [kl, v] : c) v *= (S / sbar) * d.what[i];
    } else {
      for (int k = 1; k <= d.K; ++k) {
        for (int l = 1; l <= d.K; ++l) {
          if (k != l) c[{k, l}] = ((1.0 - S) / (1.0 - sbar)) * (m(k, l) - mb(k, l));
        }
      }
    }
    acc = add(acc, lambda_apply(d.K, pt, d.rho, c), -1.0 / d.N);
  }
  return acc;
}

/// Gamma rows: +1 at k, -1 at l, reference column dropped.
inline Mat gamma_matrix(int K, const std::vector<std::pair<int, int>>& rows) {
  Mat G(rows.size(), Vec(K - 1, 0.0));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (rows[j].first >= 2) G[j][rows[j].first - 2] = 1.0;
    G[j][rows[j].second - 2] = -1.0;
  }
  return G;
}

/// (G^T G)^{-1} G^T b.
inline Vec pinv_apply(const Mat& G, const Vec& b) {
  const std::size_t J = G.size(), p = G[0].size();
  Mat A(p, Vec(p, 0.0));
  Vec r(p, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < p; ++k) {
      for (std::size_t j = 0; j < J; ++j) A[i][k] += G[j][i] * G[j][k];
    }
    for (std::size_t j = 0; j < J; ++j) r[i] += G[j][i] * b[j];
  }
  return solve(A, r);
}

/// Per-record pieces of the conditional-BT regimes: theta-hat(X_i) and the
/// (uncentred) correction for labeled records.
struct CondPieces {
  Mat theta;
  Mat corr;
};

inline CondPieces cond_if_pieces(const Instance& d, const std::vector<std::pair<int, int>>& rows,
                                 int records) {
  const Mat G = gamma_matrix(d.K, rows);
  CondPieces p;
  for (int i = 0; i < records; ++i) {
    Vec lg;
    for (const auto& r : rows) {
      const double m = d.mhat[i][index_of(d.K, r)];
      lg.push_back(std::log(m / (1.0 - m)));
    }
    p.theta.push_back(pinv_apply(G, lg));
    Vec tt(rows.size(), 0.0);
    if (i < d.n) {
      for (std::size_t j = 0; j < rows.size(); ++j) {
        if (d.a[i] == rows[j]) {
          const int q = index_of(d.K, rows[j]);
          const double m = d.mhat[i][q];
          tt[j] = (d.y[i] - m) / d.pihat[i][q] / (m * (1.0 - m));
        }
      }
    }
    p.corr.push_back(i < d.n ? pinv_apply(G, tt) : Vec(d.K - 1, 0.0));
  }
  return p;
}

inline CondPieces cond_eif_pieces(const Instance& d, int records) {
  const auto ps = pairs_of(d.K);
  const Mat G = gamma_matrix(d.K, ps);
  CondPieces p;
  for (int i = 0; i < records; ++i) {
    Vec mf = d.mhat[i];
    for (double& v : mf) {
      if (std::isnan(v)) v = 0.5;
    }
    const Vec th = project(d.K, mf, d.pihat[i]);
    p.theta.push_back(th);
    Vec corr(d.K - 1, 0.0);
    if (i < d.n) {
      auto t = [&](int k) { return k == 1 ? 0.0 : th[k - 2]; };
      Mat L(d.K - 1, Vec(d.K - 1, 0.0));
      Vec gv(d.K - 1, 0.0);
      for (std::size_t j = 0; j < ps.size(); ++j) {
        const double m = sig(t(ps[j].first) - t(ps[j].second));
        const double w = m * (1.0 - m) * d.pihat[i][j];
        for (int r = 0; r < d.K - 1; ++r) {
          for (int c = 0; c < d.K - 1; ++c) L[r][c] += G[j][r] * w * G[j][c];
        }
        if (ps[j] == d.a[i] && d.pihat[i][j] > 0.0) {
          for (int r = 0; r < d.K - 1; ++r) gv[r] += G[j][r] * (d.y[i] - m);
        }
      }
      corr = solve(L, gv);
    }
    p.corr.push_back(corr);
  }
  return p;
}

/// phi-hat from conditional-BT pieces, with or without fusion weighting.
inline Vec cond_phi(const Instance& d, const CondPieces& p, bool fusion) {
  Vec acc(d.K - 1, 0.0);
  if (!fusion) {
    for (int i = 0; i < d.n; ++i) acc = add(acc, add(p.theta[i], p.corr[i]), 1.0 / d.n);
    return acc;
  }
  const double sbar = static_cast<double>(d.n) / d.N;
  for (int i = 0; i < d.N; ++i) {
    if (i < d.n) {
      acc = add(acc, p.corr[i], d.what[i] / sbar / d.N);
    } else {
      acc = add(acc, p.theta[i], 1.0 / (1.0 - sbar) / d.N);
    }
  }
  return acc;
}

/// psi-hat under the conditional BT model:
/// psi-tilde - mean Lambda(psi-tilde){dm/dtheta c_i (weighted) + m_i - m-bar}.
inline Vec cond_psi(const Instance& d, const CondPieces& p, bool fusion) {
  const auto ps = pairs_of(d.K);
  const int records = fusion ? d.N : d.n;
  const int first = fusion ? d.n : 0;
  auto mfree = [&](const Vec& th) {
    Vec out;
    for (const auto& q : ps) {
      const double a = q.first == 1 ? 0.0 : th[q.first - 2];
      const double b = th[q.second - 2];
      out.push_back(sig(a - b));
    }
    return out;
  };
  Vec mbar(ps.size(), 0.0);
  for (int i = first; i < records; ++i) mbar = add(mbar, mfree(p.theta[i]), 1.0 / (records - first));
  const Vec pt = project(d.K, mbar, d.rho);
  const PairTable mb(d.K, mbar, true);
  const double sbar = fusion ? static_cast<double>(d.n) / d.N : 1.0;
  Vec acc = pt;
  for (int i = 0; i < records; ++i) {
    const Vec& th = p.theta[i];
    auto t = [&](int k) { return k == 1 ? 0.0 : th[k - 2]; };
    const PairTable m(d.K, mfree(th), true);
    std::map<std::pair<int, int>, double> c;
    for (int k = 2; k <= d.K; ++k) {
      for (int l = 1; l <= d.K; ++l) {
        if (k == l) continue;
        double v = 0.0;
        if (i < d.n) {
          const double s = sig(t(k) - t(l));
          double dm = s * (1.0 - s) * p.corr[i][k - 2];
          if (l >= 2) dm -= s * (1.0 - s) * p.corr[i][l - 2];
          v += (fusion ? d.what[i] / sbar : 1.0) * dm;
        }
        if (!fusion) {
          v += m(k, l) - mb(k, l);
        } else if (i >= d.n) {
          v += (m(k, l) - mb(k, l)) / (1.0 - sbar);
        }
        c[{k, l}] = v;
      }
    }
    acc = add(acc, lambda_apply(d.K, pt, d.rho, c), -1.0 / records);
  }
  return acc;
}

/// Brute-force minimizer of the pointwise KL objective for K = 3 over a
/// grid followed by successive local grid refinement.
inline Vec kl_grid_argmin(const Vec& mfree, const Vec& rhofree) {
  const PairTable m(3, mfree, true), rho(3, rhofree, false);
  auto g = [&](double t2, double t3) {
    const double th[3] = {0.0, t2, t3};
    double s = 0.0;
    for (int k = 1; k <= 3; ++k) {
      for (int l = k + 1; l <= 3; ++l) {
        const double p = sig(th[k - 1] - th[l - 1]);
        s -= rho(k, l) * (m(k, l) * std::log(p) + m(l, k) * std::log(1.0 - p));
      }
    }
    return s;
  };
  double c2 = 0.0, c3 = 0.0, h = 0.5;
  double best = g(c2, c3);
  for (int i = -20; i <= 20; ++i) {
    for (int j = -20; j <= 20; ++j) {
      const double v = g(i * h, j * h);
      if (v < best) {
        best = v;
        c2 = i * h;
        c3 = j * h;
      }
    }
  }
  for (int level = 0; level < 30; ++level) {
    h *= 0.5;
    const double b2 = c2, b3 = c3;
    for (int i = -4; i <= 4; ++i) {
      for (int j = -4; j <= 4; ++j) {
        const double v = g(b2 + i * h, b3 + j * h);
        if (v < best) {
          best = v;
          c2 = b2 + i * h;
          c3 = b3 + j * h;
        }
      }
    }
  }
  return {c2, c3};
}

}  // namespace oracle
