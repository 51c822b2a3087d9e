#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "said/metrics/distances.hpp"
#include "said/numerics/linalg.hpp"
#include "said/numerics/rng.hpp"

namespace said::testing {

using metrics::LatentGaussianSet;
using metrics::LinearProgram;

inline Tensor random_spd(Rng& rng, std::size_t d, double ridge = 0.1) {
  const Tensor a = rng.normal_tensor({d, d});
  Tensor s = linalg::matmul_nt(a, a);
  for (std::size_t i = 0; i < d; ++i) s(i, i) += ridge;
  return s;
}

inline std::vector<double> random_simplex(Rng& rng, std::size_t k) {
  std::vector<double> w(k);
  double s = 0.0;
  for (auto& v : w) s += (v = 0.1 + rng.uniform());
  for (auto& v : w) v /= s;
  return w;
}

inline LatentGaussianSet random_mixture(Rng& rng, std::size_t k, std::size_t d) {
  LatentGaussianSet g;
  const auto w = random_simplex(rng, k);
  for (std::size_t i = 0; i < k; ++i) g.components.push_back({w[i], rng.normal_tensor({d}), random_spd(rng, d)});
  return g;
}

// Independent route: tr((S_r S_g)^1/2) as the sum of square roots of the
// (real, nonnegative) eigenvalues of the nonsymmetric product.
inline double frechet_oracle(const metrics::GaussianStats& r, const metrics::GaussianStats& g) {
  const std::size_t d = r.mean.size();
  Eigen::MatrixXd sr(d, d), sg(d, d);
  double mean_term = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    mean_term += (r.mean[i] - g.mean[i]) * (r.mean[i] - g.mean[i]);
    for (std::size_t j = 0; j < d; ++j) {
      sr(i, j) = r.cov(i, j);
      sg(i, j) = g.cov(i, j);
    }
  }
  const Eigen::VectorXcd ev = (sr * sg).eigenvalues();
  double root = 0.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) root += std::sqrt(std::max(0.0, ev[i].real()));
  return mean_term + sr.trace() + sg.trace() - 2.0 * root;
}

// Brute-force LP oracle: every basic solution of the standard-form system
// with n active constraints among {A_ub x <= b, A_eq x = b, x >= 0}.
inline double lp_vertex_oracle(const LinearProgram& lp) {
  const std::size_t n = lp.c.size();
  const std::size_t m_ub = lp.b_ub.size(), m_eq = lp.b_eq.size();
  // Candidate constraint rows: inequality rows then the nonnegativity rows.
  const std::size_t cand = m_ub + n;
  auto row_of = [&](std::size_t r, Eigen::VectorXd& a, double& b) {
    a.setZero(static_cast<Eigen::Index>(n));
    if (r < m_ub) {
      for (std::size_t j = 0; j < n; ++j) a[static_cast<Eigen::Index>(j)] = lp.a_ub(r, j);
      b = lp.b_ub[r];
    } else {
      a[static_cast<Eigen::Index>(r - m_ub)] = 1.0;
      b = 0.0;
    }
  };
  const std::size_t pick = n - m_eq;
  double best = std::numeric_limits<double>::infinity();
  std::vector<bool> sel(cand, false);
  std::fill(sel.begin(), sel.begin() + static_cast<std::ptrdiff_t>(pick), true);
  do {
    Eigen::MatrixXd a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    Eigen::VectorXd b(static_cast<Eigen::Index>(n));
    Eigen::Index r = 0;
    for (std::size_t e = 0; e < m_eq; ++e, ++r) {
      for (std::size_t j = 0; j < n; ++j) a(r, static_cast<Eigen::Index>(j)) = lp.a_eq(e, j);
      b[r] = lp.b_eq[e];
    }
    for (std::size_t k = 0; k < cand; ++k) {
      if (!sel[k]) continue;
      Eigen::VectorXd row;
      double rhs = 0.0;
      row_of(k, row, rhs);
      a.row(r) = row.transpose();
      b[r] = rhs;
      ++r;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (lu.rank() < static_cast<Eigen::Index>(n)) continue;
    const Eigen::VectorXd x = lu.solve(b);
    bool feasible = true;
    for (std::size_t j = 0; j < n && feasible; ++j) feasible = x[static_cast<Eigen::Index>(j)] >= -1e-9;
    for (std::size_t i = 0; i < m_ub && feasible; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += lp.a_ub(i, j) * x[static_cast<Eigen::Index>(j)];
      feasible = s <= lp.b_ub[i] + 1e-9;
    }
    if (!feasible) continue;
    double obj = 0.0;
    for (std::size_t j = 0; j < n; ++j) obj += lp.c[j] * x[static_cast<Eigen::Index>(j)];
    best = std::min(best, obj);
  } while (std::prev_permutation(sel.begin(), sel.end()));
  return best;
}

inline LinearProgram transport_lp(const Tensor& d, const std::vector<double>& pr, const std::vector<double>& pg) {
  const std::size_t kr = pr.size(), kg = pg.size(), n = kr * kg;
  LinearProgram lp;
  lp.c.assign(d.values().begin(), d.values().end());
  lp.a_ub = Tensor({kr + kg, n});
  lp.b_ub.resize(kr + kg);
  for (std::size_t i = 0; i < kr; ++i) {
    lp.b_ub[i] = pr[i];
    for (std::size_t j = 0; j < kg; ++j) lp.a_ub(i, i * kg + j) = 1.0;
  }
  for (std::size_t j = 0; j < kg; ++j) {
    lp.b_ub[kr + j] = pg[j];
    for (std::size_t i = 0; i < kr; ++i) lp.a_ub(kr + j, i * kg + j) = 1.0;
  }
  lp.a_eq = Tensor({1, n}, 1.0);
  lp.b_eq = {1.0};
  return lp;
}

}  // namespace said::testing
