#include <algorithm>
#include <cmath>
#include <limits>

#include "said/coeff_fit/coeff_fit.hpp"
#include "said/error.hpp"
#include "said/numerics/linalg.hpp"

namespace said::coeff_fit {

namespace {

double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

/// Solver for (P + sigma I + diag(w_box) + E' diag(w_vel) E) x = b, which is
/// block tridiagonal: diagonal blocks B'B + diag(...), off-diagonal blocks
/// -diag(w_vel). Block Schur complements are factored once, O(N K^3).
class BlockTridiagonal {
 public:
  BlockTridiagonal(const Tensor& btb, std::size_t n, double sigma, const std::vector<double>& w_box,
                   const std::vector<double>& w_vel)
      : n_(n), k_(btb.rows()), c_(w_vel), chol_(n) {
    for (std::size_t f = 0; f < n_; ++f) {
      Tensor d = btb;
      for (std::size_t i = 0; i < k_; ++i) {
        double diag = sigma + w_box[f * k_ + i];
        if (f > 0) diag += w_vel[(f - 1) * k_ + i];
        if (f + 1 < n_) diag += w_vel[f * k_ + i];
        d(i, i) += diag;
      }
      if (f > 0) {
        // S_f = D_f - C S_{f-1}^{-1} C with C = -diag(w_vel[f-1]).
        const Tensor inv = linalg::cholesky_inverse(chol_[f - 1]);
        const double* c = &c_[(f - 1) * k_];
        for (std::size_t i = 0; i < k_; ++i)
          for (std::size_t j = 0; j < k_; ++j) d(i, j) -= c[i] * inv(i, j) * c[j];
      }
      chol_[f] = linalg::cholesky(d);
    }
  }

  void solve(std::vector<double>& b) const {
    // Forward: y_f = b_f - C S_{f-1}^{-1} y_{f-1}; t_f = S_f^{-1} y_f kept for the back pass.
    std::vector<double> t(b.size());
    for (std::size_t f = 0; f < n_; ++f) {
      double* bf = &b[f * k_];
      if (f > 0) {
        const double* c = &c_[(f - 1) * k_];
        const double* tp = &t[(f - 1) * k_];
        for (std::size_t i = 0; i < k_; ++i) bf[i] += c[i] * tp[i];
      }
      std::copy(bf, bf + k_, t.begin() + static_cast<std::ptrdiff_t>(f * k_));
      linalg::cholesky_solve_inplace(chol_[f], std::span<double>(&t[f * k_], k_));
    }
    // Back: x_f = t_f - S_f^{-1} C x_{f+1} = t_f + S_f^{-1} diag(w) x_{f+1}.
    std::vector<double> tmp(k_);
    for (std::size_t f = n_; f-- > 0;) {
      double* xf = &b[f * k_];
      std::copy(&t[f * k_], &t[f * k_] + k_, xf);
      if (f + 1 < n_) {
        const double* c = &c_[f * k_];
        const double* xn = &b[(f + 1) * k_];
        for (std::size_t i = 0; i < k_; ++i) tmp[i] = c[i] * xn[i];
        linalg::cholesky_solve_inplace(chol_[f], tmp);
        for (std::size_t i = 0; i < k_; ++i) xf[i] += tmp[i];
      }
    }
  }

 private:
  std::size_t n_, k_;
  std::vector<double> c_;
  std::vector<Tensor> chol_;
};

struct Problem {
  std::size_t n, k;
  Tensor p;               // scaled K x K block
  std::vector<double> q;  // scaled
  double delta;

  std::size_t nbox() const { return n * k; }
  std::size_t nvel() const { return n > 0 ? (n - 1) * k : 0; }

  void mul_p(const std::vector<double>& x, std::vector<double>& out) const {
    out.assign(x.size(), 0.0);
    for (std::size_t f = 0; f < n; ++f) {
      for (std::size_t i = 0; i < k; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += p(i, j) * x[f * k + j];
        out[f * k + i] = s;
      }
    }
  }
  void mul_e(const std::vector<double>& x, std::vector<double>& out) const {
    out.resize(nvel());
    for (std::size_t i = 0; i < nvel(); ++i) out[i] = x[i + k] - x[i];
  }
  // out += E' v
  void add_et(const std::vector<double>& v, std::vector<double>& out) const {
    for (std::size_t i = 0; i < nvel(); ++i) {
      out[i + k] += v[i];
      out[i] -= v[i];
    }
  }
  double dual_residual(const std::vector<double>& x, const std::vector<double>& yb,
                       const std::vector<double>& yv) const {
    std::vector<double> r;
    mul_p(x, r);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += q[i] + yb[i];
    add_et(yv, r);
    return inf_norm(r);
  }
  double primal_violation(const std::vector<double>& x) const {
    double v = 0.0;
    for (double xi : x) v = std::max({v, -xi, xi - 1.0});
    std::vector<double> e;
    mul_e(x, e);
    for (double ei : e) v = std::max(v, std::abs(ei) - delta);
    return std::max(v, 0.0);
  }
};

struct PolishResult {
  bool ok = false;
  std::vector<double> x, yb, yv;
  double primal = 0, dual = 0;
};

// Equality-constrained QP on the active set guessed from the ADMM iterate. The
// penalized KKT matrix keeps the block-tridiagonal structure.
PolishResult polish(const Problem& pr, const std::vector<double>& x0, const std::vector<double>& z_box,
                    const std::vector<double>& z_vel, const std::vector<double>& y_box,
                    const std::vector<double>& y_vel, double tol_dual) {
  const std::size_t nb = pr.nbox(), nv = pr.nvel();
  constexpr double kPenalty = 1e6;
  // active: -1 lower, +1 upper, 0 inactive
  std::vector<int> ab(nb, 0), av(nv, 0);
  for (std::size_t i = 0; i < nb; ++i) {
    if (z_box[i] - 0.0 < -y_box[i]) ab[i] = -1;
    else if (1.0 - z_box[i] < y_box[i]) ab[i] = 1;
  }
  for (std::size_t i = 0; i < nv; ++i) {
    if (z_vel[i] + pr.delta < -y_vel[i]) av[i] = -1;
    else if (pr.delta - z_vel[i] < y_vel[i]) av[i] = 1;
  }
  std::vector<double> wb(nb, 0.0), wv(nv, 0.0), bb(nb, 0.0), bv(nv, 0.0);
  std::vector<double> lb(nb, 0.0), lv(nv, 0.0);
  for (std::size_t i = 0; i < nb; ++i) {
    if (!ab[i]) continue;
    wb[i] = kPenalty;
    bb[i] = ab[i] > 0 ? 1.0 : 0.0;
    lb[i] = y_box[i];
  }
  for (std::size_t i = 0; i < nv; ++i) {
    if (!av[i]) continue;
    wv[i] = kPenalty;
    bv[i] = av[i] > 0 ? pr.delta : -pr.delta;
    lv[i] = y_vel[i];
  }

  PolishResult res;
  BlockTridiagonal solver(pr.p, pr.n, 0.0, wb, wv);
  // Iterative refinement on the unregularized KKT system; each step solves the
  // penalized system (P + w A'A) dx = r1 + w A' r2, dlambda = w (A dx - r2).
  std::vector<double> x = x0, px, ex, dx(nb), edx, r2b(nb, 0.0), r2v(nv, 0.0);
  for (int it = 0; it < 25; ++it) {
    pr.mul_p(x, px);
    pr.mul_e(x, ex);
    for (std::size_t i = 0; i < nb; ++i) {
      r2b[i] = ab[i] ? bb[i] - x[i] : 0.0;
      dx[i] = -pr.q[i] - px[i] - lb[i] + wb[i] * r2b[i];
    }
    std::vector<double> v(nv);
    for (std::size_t i = 0; i < nv; ++i) {
      r2v[i] = av[i] ? bv[i] - ex[i] : 0.0;
      v[i] = -lv[i] + wv[i] * r2v[i];
    }
    pr.add_et(v, dx);
    solver.solve(dx);
    pr.mul_e(dx, edx);
    double step = 0.0;
    for (std::size_t i = 0; i < nb; ++i) {
      x[i] += dx[i];
      step = std::max(step, std::abs(dx[i]));
      if (ab[i]) lb[i] += wb[i] * (dx[i] - r2b[i]);
    }
    for (std::size_t i = 0; i < nv; ++i) {
      if (av[i]) lv[i] += wv[i] * (edx[i] - r2v[i]);
    }
    if (step < 1e-15) break;
  }

  for (std::size_t i = 0; i < nb; ++i) {
    if ((ab[i] < 0 && lb[i] > tol_dual) || (ab[i] > 0 && lb[i] < -tol_dual)) return res;
  }
  for (std::size_t i = 0; i < nv; ++i) {
    if ((av[i] < 0 && lv[i] > tol_dual) || (av[i] > 0 && lv[i] < -tol_dual)) return res;
  }
  res.x = std::move(x);
  res.yb = std::move(lb);
  res.yv = std::move(lv);
  res.primal = pr.primal_violation(res.x);
  res.dual = pr.dual_residual(res.x, res.yb, res.yv);
  res.ok = true;
  return res;
}

}  // namespace

double QPInstance::objective(const std::vector<double>& u) const {
  if (u.size() != frames * channels) throw DimensionMismatch("coefficient vector has the wrong length");
  double obj = 0.0;
  for (std::size_t f = 0; f < frames; ++f) {
    const double* uf = &u[f * channels];
    for (std::size_t i = 0; i < channels; ++i) {
      double pu = 0.0;
      for (std::size_t j = 0; j < channels; ++j) pu += btb(i, j) * uf[j];
      obj += 0.5 * uf[i] * pu + q[f * channels + i] * uf[i];
    }
  }
  return obj;
}

Tensor QPInstance::dense_P() const {
  const std::size_t nk = frames * channels;
  Tensor p({nk, nk});
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t i = 0; i < channels; ++i)
      for (std::size_t j = 0; j < channels; ++j) p(f * channels + i, f * channels + j) = btb(i, j);
  return p;
}

Tensor QPInstance::dense_G() const {
  const std::size_t nk = frames * channels;
  const std::size_t rows = frames > 0 ? 2 * channels * (frames - 1) : 0;
  Tensor g({rows, nk});
  for (std::size_t f = 0; f + 1 < frames; ++f) {
    for (std::size_t i = 0; i < channels; ++i) {
      const std::size_t r = 2 * channels * f;
      // [D -D] with D = [I; -I]: u^f - u^{f+1} <= delta, then u^{f+1} - u^f <= delta.
      g(r + i, f * channels + i) = 1.0;
      g(r + i, (f + 1) * channels + i) = -1.0;
      g(r + channels + i, f * channels + i) = -1.0;
      g(r + channels + i, (f + 1) * channels + i) = 1.0;
    }
  }
  return g;
}

std::vector<double> QPInstance::h() const {
  return std::vector<double>(frames > 0 ? 2 * channels * (frames - 1) : 0, delta);
}

double constraint_violation(const QPInstance& qp, const std::vector<double>& u) {
  Problem pr{qp.frames, qp.channels, qp.btb, qp.q, qp.delta};
  return pr.primal_violation(u);
}

double stationarity(const QPInstance& qp, const std::vector<double>& u, const std::vector<double>& y_box,
                    const std::vector<double>& y_vel) {
  Problem pr{qp.frames, qp.channels, qp.btb, qp.q, qp.delta};
  return pr.dual_residual(u, y_box, y_vel);
}

QPSolution solve_qp(const QPInstance& qp, const QPConfig& cfg, const std::vector<double>* warm_start) {
  if (!(cfg.delta > 0) || !(cfg.tol_primal > 0) || !(cfg.tol_dual > 0) || cfg.max_iter < 0) {
    throw Error("QP config needs delta > 0, positive tolerances and max_iter >= 0");
  }
  const std::size_t n = qp.frames, k = qp.channels, nb = n * k;
  const std::size_t nv = n > 0 ? (n - 1) * k : 0;
  QPSolution sol;
  sol.u.assign(nb, 0.0);
  sol.y_box.assign(nb, 0.0);
  sol.y_vel.assign(nv, 0.0);
  if (nb == 0) {
    sol.diagnostics.converged = true;
    return sol;
  }

  double max_diag = 0.0;
  for (std::size_t i = 0; i < k; ++i) max_diag = std::max(max_diag, qp.btb(i, i));
  const double scale = 1.0 / max_diag;
  Problem pr{n, k, qp.btb * scale, qp.q, qp.delta};
  for (double& v : pr.q) v *= scale;

  // Warm start: clipped per-frame unconstrained minimizers.
  std::vector<double> x(nb);
  if (warm_start) {
    if (warm_start->size() != nb) throw DimensionMismatch("warm start has the wrong length");
    x = *warm_start;
  } else {
    const Tensor l = linalg::cholesky(pr.p);
    for (std::size_t f = 0; f < n; ++f) {
      std::span<double> xf(&x[f * k], k);
      for (std::size_t i = 0; i < k; ++i) xf[i] = -pr.q[f * k + i];
      linalg::cholesky_solve_inplace(l, xf);
    }
  }
  for (double& v : x) v = std::clamp(v, 0.0, 1.0);

  std::vector<double> zb = x, zv, yb(nb, 0.0), yv(nv, 0.0);
  pr.mul_e(x, zv);
  for (double& v : zv) v = std::clamp(v, -qp.delta, qp.delta);

  double rho = cfg.rho;
  auto make_solver = [&](double r) {
    return BlockTridiagonal(pr.p, n, cfg.sigma, std::vector<double>(nb, r), std::vector<double>(nv, r));
  };
  BlockTridiagonal solver = make_solver(rho);

  std::vector<double> rhs(nb), ex, px;
  double r_prim = std::numeric_limits<double>::infinity(), r_dual = r_prim;
  int iter = 0;
  bool converged = false;
  bool polished = false;

  auto try_polish = [&]() {
    if (!cfg.polish) return false;
    PolishResult pol = polish(pr, x, zb, zv, yb, yv, cfg.tol_dual);
    if (!pol.ok || pol.primal > cfg.tol_primal || pol.dual > cfg.tol_dual) return false;
    x = pol.x;
    yb = pol.yb;
    yv = pol.yv;
    r_prim = pol.primal;
    r_dual = pol.dual;
    return true;
  };

  for (iter = 1; iter <= cfg.max_iter; ++iter) {
    for (std::size_t i = 0; i < nb; ++i) rhs[i] = cfg.sigma * x[i] - pr.q[i] + rho * zb[i] - yb[i];
    std::vector<double> v(nv);
    for (std::size_t i = 0; i < nv; ++i) v[i] = rho * zv[i] - yv[i];
    pr.add_et(v, rhs);
    solver.solve(rhs);
    const std::vector<double>& xt = rhs;
    pr.mul_e(xt, ex);

    for (std::size_t i = 0; i < nb; ++i) {
      x[i] = cfg.alpha * xt[i] + (1.0 - cfg.alpha) * x[i];
      const double zh = cfg.alpha * xt[i] + (1.0 - cfg.alpha) * zb[i];
      const double zn = std::clamp(zh + yb[i] / rho, 0.0, 1.0);
      yb[i] += rho * (zh - zn);
      zb[i] = zn;
    }
    for (std::size_t i = 0; i < nv; ++i) {
      const double zh = cfg.alpha * ex[i] + (1.0 - cfg.alpha) * zv[i];
      const double zn = std::clamp(zh + yv[i] / rho, -qp.delta, qp.delta);
      yv[i] += rho * (zh - zn);
      zv[i] = zn;
    }

    // Residuals of the current iterate.
    pr.mul_e(x, ex);
    r_prim = 0.0;
    for (std::size_t i = 0; i < nb; ++i) r_prim = std::max(r_prim, std::abs(x[i] - zb[i]));
    for (std::size_t i = 0; i < nv; ++i) r_prim = std::max(r_prim, std::abs(ex[i] - zv[i]));
    r_dual = pr.dual_residual(x, yb, yv);

    if (r_prim <= cfg.tol_primal && r_dual <= cfg.tol_dual) {
      converged = true;
      break;
    }
    if (cfg.polish_interval > 0 && iter % cfg.polish_interval == 0 && try_polish()) {
      converged = polished = true;
      break;
    }
    if (cfg.adapt_interval > 0 && iter % cfg.adapt_interval == 0) {
      const double ratio = r_prim / std::max(r_dual, 1e-300);
      double next = rho;
      if (ratio > 10.0) next = rho * 2.0;
      else if (ratio < 0.1) next = rho / 2.0;
      next = std::clamp(next, 1e-6, 1e6);
      if (next != rho) {
        rho = next;
        solver = make_solver(rho);
      }
    }
  }
  iter = std::min(iter, cfg.max_iter);

  if (!polished) {
    // A successful polish replaces the ADMM iterate with a near-exact KKT point.
    if (try_polish()) {
      polished = true;
      converged = true;
    }
  }

  if (!polished) {
    for (double& v : x) v = std::clamp(v, 0.0, 1.0);
  }
  sol.u = x;
  sol.y_box.resize(nb);
  sol.y_vel.resize(nv);
  for (std::size_t i = 0; i < nb; ++i) sol.y_box[i] = yb[i] / scale;
  for (std::size_t i = 0; i < nv; ++i) sol.y_vel[i] = yv[i] / scale;

  QPDiagnostics& d = sol.diagnostics;
  d.iterations = iter;
  d.primal_residual = pr.primal_violation(sol.u);
  d.dual_residual = pr.dual_residual(sol.u, yb, yv);
  d.objective = qp.objective(sol.u);
  d.rho = rho;
  d.polished = polished;
  d.converged = converged && d.primal_residual <= cfg.tol_primal;
  return sol;
}

}  // namespace said::coeff_fit
