#include "said/metrics/distances.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "said/error.hpp"
#include "said/numerics/linalg.hpp"

namespace said::metrics {

namespace {

void require_matrix(const Tensor& x, const char* what) {
  if (x.rank() != 2) throw ShapeMismatch(std::string(what) + ": expected a matrix, got " + shape_string(x.shape()));
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// Log-density evaluator for one component.
struct ComponentDensity {
  Tensor chol;
  double log_norm = 0.0;  // log pi - d/2 log(2 pi) - 1/2 log det
  const Tensor* mean = nullptr;

  ComponentDensity(const GaussianComponent& c)
      : chol(linalg::cholesky(c.cov)), mean(&c.mean) {
    const double d = static_cast<double>(c.mean.size());
    log_norm = std::log(c.weight) - 0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * linalg::cholesky_logdet(chol);
  }

  double operator()(std::span<const double> x) const {
    const std::size_t d = x.size();
    // Forward substitution L z = x - mu; the Mahalanobis term is |z|^2.
    std::vector<double> z(d);
    double q = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double s = x[i] - (*mean)[i];
      for (std::size_t k = 0; k < i; ++k) s -= chol(i, k) * z[k];
      z[i] = s / chol(i, i);
      q += z[i] * z[i];
    }
    return log_norm - 0.5 * q;
  }
};

std::vector<ComponentDensity> densities(const LatentGaussianSet& g) {
  std::vector<ComponentDensity> out;
  out.reserve(g.components.size());
  for (const auto& c : g.components) out.emplace_back(c);
  return out;
}

/// Mean log-likelihood; fills responsibilities (M x K) when given.
double e_step(const LatentGaussianSet& g, const Tensor& x, Tensor* resp) {
  const auto dens = densities(g);
  const std::size_t m = x.rows();
  const std::size_t k = dens.size();
  std::vector<double> lp(k);
  double total = 0.0;
  for (std::size_t n = 0; n < m; ++n) {
    for (std::size_t j = 0; j < k; ++j) lp[j] = dens[j](x.row(n));
    const double lse = log_sum_exp(lp);
    total += lse;
    if (resp)
      for (std::size_t j = 0; j < k; ++j) (*resp)(n, j) = std::exp(lp[j] - lse);
  }
  return total / static_cast<double>(m);
}

void m_step(LatentGaussianSet& g, const Tensor& x, const Tensor& resp, double ridge) {
  const std::size_t m = x.rows();
  const std::size_t d = x.cols();
  const double floor = 10.0 * std::numeric_limits<double>::epsilon();
  for (std::size_t j = 0; j < g.components.size(); ++j) {
    auto& c = g.components[j];
    double nk = floor;
    Tensor mu({d});
    for (std::size_t n = 0; n < m; ++n) {
      const double r = resp(n, j);
      nk += r;
      for (std::size_t a = 0; a < d; ++a) mu[a] += r * x(n, a);
    }
    for (std::size_t a = 0; a < d; ++a) mu[a] /= nk;
    Tensor cov({d, d});
    for (std::size_t n = 0; n < m; ++n) {
      const double r = resp(n, j);
      if (r == 0.0) continue;
      for (std::size_t a = 0; a < d; ++a) {
        const double da = r * (x(n, a) - mu[a]);
        for (std::size_t b = 0; b <= a; ++b) cov(a, b) += da * (x(n, b) - mu[b]);
      }
    }
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b <= a; ++b) cov(b, a) = cov(a, b) = cov(a, b) / nk;
      cov(a, a) += ridge;
    }
    c.weight = nk / static_cast<double>(m);
    c.mean = std::move(mu);
    c.cov = std::move(cov);
  }
  double total = 0.0;
  for (const auto& c : g.components) total += c.weight;
  for (auto& c : g.components) c.weight /= total;
}

/// k-means++ seeding followed by Lloyd iterations; returns hard assignments.
std::vector<std::size_t> kmeans(const Tensor& x, std::size_t k, std::size_t iters, Rng& rng) {
  const std::size_t m = x.rows();
  const std::size_t d = x.cols();
  Tensor centers({k, d});
  std::vector<double> d2(m, std::numeric_limits<double>::infinity());
  auto set_center = [&](std::size_t c, std::size_t n) {
    std::copy(x.row(n).begin(), x.row(n).end(), centers.row(c).begin());
    for (std::size_t i = 0; i < m; ++i) d2[i] = std::min(d2[i], squared_distance(x.row(i), centers.row(c)));
  };
  set_center(0, rng.below(m));
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      pick = m - 1;
      for (std::size_t i = 0; i < m; ++i) {
        u -= d2[i];
        if (u < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.below(m);
    }
    set_center(c, pick);
  }

  std::vector<std::size_t> assign(m, k);
  for (std::size_t it = 0; it < iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dd = squared_distance(x.row(i), centers.row(c));
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Tensor sums({k, d});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < m; ++i) {
      ++counts[assign[i]];
      for (std::size_t a = 0; a < d; ++a) sums(assign[i], a) += x(i, a);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // keep the previous center
      for (std::size_t a = 0; a < d; ++a) centers(c, a) = sums(c, a) / static_cast<double>(counts[c]);
    }
  }
  return assign;
}

GmmFit fit_once(const Tensor& x, const GmmOptions& opts, Rng& rng) {
  const std::size_t m = x.rows();
  const std::size_t k = opts.components;
  const auto assign = kmeans(x, k, opts.kmeans_iter, rng);

  // Initial parameters from the hard assignment.
  Tensor resp({m, k});
  for (std::size_t i = 0; i < m; ++i) resp(i, assign[i]) = 1.0;
  GmmFit fit;
  fit.model.components.resize(k);
  m_step(fit.model, x, resp, opts.ridge);
  for (std::size_t j = 0; j < k; ++j) {
    auto& c = fit.model.components[j];
    if (c.weight * static_cast<double>(m) < 0.5) {
      // Empty cluster: global covariance centered on a random sample.
      Tensor ones({m, 1}, 1.0);
      LatentGaussianSet global;
      global.components.resize(1);
      m_step(global, x, ones, opts.ridge);
      c.mean = Tensor({x.cols()});
      const auto row = x.row(rng.below(m));
      std::copy(row.begin(), row.end(), c.mean.data().begin());
      c.cov = global.components[0].cov;
      c.weight = 1.0 / static_cast<double>(m);
    }
  }
  double total = 0.0;
  for (const auto& c : fit.model.components) total += c.weight;
  for (auto& c : fit.model.components) c.weight /= total;

  double prev = 0.0;
  for (std::size_t it = 0; it < opts.max_iter; ++it) {
    const double ll = e_step(fit.model, x, &resp);
    fit.log_likelihood.push_back(ll);
    if (it > 0 && std::abs(ll - prev) <= opts.tol * (1.0 + std::abs(ll))) {
      fit.converged = true;
      return fit;
    }
    prev = ll;
    m_step(fit.model, x, resp, opts.ridge);
  }
  fit.log_likelihood.push_back(e_step(fit.model, x, nullptr));
  return fit;
}

GaussianStats stats_of(const GaussianComponent& c) { return {c.mean, c.cov}; }

}  // namespace

GaussianStats gaussian_stats(const Tensor& features) {
  require_matrix(features, "gaussian_stats");
  const std::size_t m = features.rows();
  const std::size_t d = features.cols();
  if (m < 2) throw Degenerate("gaussian_stats: need at least two samples, got " + std::to_string(m));
  GaussianStats s{Tensor({d}), Tensor({d, d})};
  for (std::size_t n = 0; n < m; ++n)
    for (std::size_t a = 0; a < d; ++a) s.mean[a] += features(n, a);
  for (std::size_t a = 0; a < d; ++a) s.mean[a] /= static_cast<double>(m);
  for (std::size_t n = 0; n < m; ++n)
    for (std::size_t a = 0; a < d; ++a) {
      const double da = features(n, a) - s.mean[a];
      for (std::size_t b = 0; b <= a; ++b) s.cov(a, b) += da * (features(n, b) - s.mean[b]);
    }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b <= a; ++b) s.cov(b, a) = s.cov(a, b) = s.cov(a, b) / static_cast<double>(m - 1);
  return s;
}

double frechet_distance(const GaussianStats& r, const GaussianStats& g) {
  const std::size_t d = r.mean.size();
  if (g.mean.size() != d || r.cov.shape() != Shape{d, d} || g.cov.shape() != Shape{d, d})
    throw DimensionMismatch("frechet_distance: dimensions " + shape_string(r.cov.shape()) + " and " +
                            shape_string(g.cov.shape()));
  const Tensor root_r = linalg::sym_sqrt(r.cov);
  Tensor inner = linalg::matmul(linalg::matmul(root_r, g.cov), root_r);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) inner(i, j) = inner(j, i) = 0.5 * (inner(i, j) + inner(j, i));
  const Tensor cross = linalg::sym_sqrt(inner);
  // Validates the second covariance.
  (void)linalg::sym_sqrt(g.cov);
  const double mean_term = squared_distance(r.mean.data(), g.mean.data());
  const double cov_term = linalg::trace(r.cov) + linalg::trace(g.cov) - 2.0 * linalg::trace(cross);
  return std::max(0.0, mean_term + cov_term);
}

double LatentGaussianSet::mean_log_likelihood(const Tensor& x) const {
  require_matrix(x, "mean_log_likelihood");
  if (x.cols() != dim()) throw ShapeMismatch("mean_log_likelihood: feature width does not match the mixture");
  return e_step(*this, x, nullptr);
}

GmmFit fit_gmm(const Tensor& features, const GmmOptions& opts, Rng& rng) {
  require_matrix(features, "fit_gmm");
  if (opts.components == 0) throw InvalidConfig("fit_gmm: components must be positive");
  if (features.rows() < opts.components)
    throw Degenerate("fit_gmm: " + std::to_string(features.rows()) + " samples for " +
                     std::to_string(opts.components) + " components");
  GmmFit best;
  double best_ll = -std::numeric_limits<double>::infinity();
  const std::size_t restarts = std::max<std::size_t>(1, opts.restarts);
  for (std::size_t r = 0; r < restarts; ++r) {
    GmmFit fit = fit_once(features, opts, rng);
    const double ll = fit.log_likelihood.back();
    if (ll > best_ll) {
      best_ll = ll;
      best = std::move(fit);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Simplex

namespace {

constexpr double kPivotTol = 1e-11;

/// Tableau over the equality system [A_ub I; A_eq 0] x = b with one
/// artificial column per row, rows sign-flipped so that b >= 0.
class Tableau {
 public:
  Tableau(const LinearProgram& lp) {
    n_ = lp.c.size();
    m_ub_ = lp.b_ub.size();
    m_eq_ = lp.b_eq.size();
    m_ = m_ub_ + m_eq_;
    if (m_ub_ > 0 && lp.a_ub.shape() != Shape{m_ub_, n_}) throw ShapeMismatch("solve_lp: a_ub shape");
    if (m_eq_ > 0 && lp.a_eq.shape() != Shape{m_eq_, n_}) throw ShapeMismatch("solve_lp: a_eq shape");
    cols_ = n_ + m_ub_ + m_;
    t_.assign(m_ * (cols_ + 1), 0.0);
    sign_.assign(m_, 1.0);
    basis_.resize(m_);
    for (std::size_t i = 0; i < m_; ++i) {
      const bool ub = i < m_ub_;
      const double b = ub ? lp.b_ub[i] : lp.b_eq[i - m_ub_];
      sign_[i] = b < 0.0 ? -1.0 : 1.0;
      for (std::size_t j = 0; j < n_; ++j) at(i, j) = sign_[i] * (ub ? lp.a_ub(i, j) : lp.a_eq(i - m_ub_, j));
      if (ub) at(i, n_ + i) = sign_[i];
      at(i, n_ + m_ub_ + i) = 1.0;
      rhs(i) = sign_[i] * b;
      basis_[i] = n_ + m_ub_ + i;
    }
  }

  LpSolution solve(const std::vector<double>& c) {
    // Phase 1: minimize the sum of artificials.
    std::vector<double> c1(cols_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) c1[n_ + m_ub_ + i] = 1.0;
    run(c1, cols_);
    double infeas = 0.0, scale = 1.0;
    for (std::size_t i = 0; i < m_; ++i) {
      scale += std::abs(rhs(i));
      if (is_artificial(basis_[i])) infeas += rhs(i);
    }
    if (infeas > 1e-9 * scale) throw Infeasible("solve_lp: phase one ended with infeasibility " + std::to_string(infeas));

    // Drive zero-level artificials out of the basis where possible; rows
    // that cannot be pivoted are redundant and keep their artificial at 0.
    for (std::size_t i = 0; i < m_; ++i) {
      if (!is_artificial(basis_[i])) continue;
      for (std::size_t j = 0; j < n_ + m_ub_; ++j) {
        if (std::abs(at(i, j)) > kPivotTol) {
          pivot(i, j);
          break;
        }
      }
    }

    std::vector<double> c2(cols_, 0.0);
    std::copy(c.begin(), c.end(), c2.begin());
    const std::vector<double> d = run(c2, n_ + m_ub_);

    LpSolution sol;
    sol.pivots = pivots_;
    sol.x.assign(n_, 0.0);
    for (std::size_t i = 0; i < m_; ++i)
      if (basis_[i] < n_) sol.x[basis_[i]] = std::max(0.0, rhs(i));
    for (std::size_t j = 0; j < n_; ++j) sol.objective += c[j] * sol.x[j];
    // The reduced cost of artificial i is -y_i for the sign-flipped row.
    sol.dual_ub.resize(m_ub_);
    sol.dual_eq.resize(m_eq_);
    for (std::size_t i = 0; i < m_; ++i) {
      const double y = -d[n_ + m_ub_ + i] * sign_[i];
      if (i < m_ub_)
        sol.dual_ub[i] = y;
      else
        sol.dual_eq[i - m_ub_] = y;
    }
    return sol;
  }

 private:
  bool is_artificial(std::size_t j) const { return j >= n_ + m_ub_; }
  double& at(std::size_t i, std::size_t j) { return t_[i * (cols_ + 1) + j]; }
  double& rhs(std::size_t i) { return t_[i * (cols_ + 1) + cols_]; }

  void pivot(std::size_t r, std::size_t c) {
    const double p = at(r, c);
    for (std::size_t j = 0; j <= cols_; ++j) at(r, j) /= p;
    for (std::size_t i = 0; i < m_; ++i) {
      if (i == r) continue;
      const double f = at(i, c);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j <= cols_; ++j) at(i, j) -= f * at(r, j);
      at(i, c) = 0.0;
    }
    basis_[r] = c;
    ++pivots_;
  }

  std::vector<double> reduced_costs(const std::vector<double>& c) {
    std::vector<double> d = c;
    for (std::size_t i = 0; i < m_; ++i) {
      const double cb = c[basis_[i]];
      if (cb == 0.0) continue;
      for (std::size_t j = 0; j < cols_; ++j) d[j] -= cb * at(i, j);
    }
    return d;
  }

  /// Primal simplex with Bland's rule; columns at or beyond `enter_limit`
  /// never enter. Returns the final reduced costs.
  std::vector<double> run(const std::vector<double>& c, std::size_t enter_limit) {
    const std::size_t max_pivots = 50 * (cols_ + m_) + 1000;
    for (std::size_t guard = 0;; ++guard) {
      if (guard > max_pivots) throw NumericalError("solve_lp: pivot limit reached");
      const std::vector<double> d = reduced_costs(c);
      std::size_t enter = cols_;
      for (std::size_t j = 0; j < enter_limit; ++j)
        if (d[j] < -1e-10) {
          enter = j;
          break;
        }
      if (enter == cols_) return d;
      std::size_t leave = m_;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < m_; ++i) {
        const double a = at(i, enter);
        if (a <= kPivotTol) continue;
        const double ratio = rhs(i) / a;
        if (ratio < best - 1e-14) {
          best = ratio;
          leave = i;
        } else if (ratio <= best + 1e-14 && basis_[i] < basis_[leave]) {
          leave = i;
        }
      }
      if (leave == m_) throw NumericalError("solve_lp: objective is unbounded");
      pivot(leave, enter);
    }
  }

  std::size_t n_ = 0, m_ub_ = 0, m_eq_ = 0, m_ = 0, cols_ = 0, pivots_ = 0;
  std::vector<double> t_;
  std::vector<double> sign_;
  std::vector<std::size_t> basis_;
};

}  // namespace

LpSolution solve_lp(const LinearProgram& lp) {
  if (lp.c.empty()) throw ShapeMismatch("solve_lp: no variables");
  return Tableau(lp).solve(lp.c);
}

TransportPlan wind(const LatentGaussianSet& real, const LatentGaussianSet& generated) {
  const std::size_t kr = real.components.size();
  const std::size_t kg = generated.components.size();
  if (kr == 0 || kg == 0) throw EmptyInput("wind: empty mixture");
  if (real.dim() != generated.dim()) throw DimensionMismatch("wind: mixtures have different dimensions");
  for (const auto* g : {&real, &generated}) {
    double total = 0.0;
    for (const auto& c : g->components) {
      if (c.weight < 0.0) throw Infeasible("wind: negative mixture weight");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9) throw Infeasible("wind: mixture weights sum to " + std::to_string(total));
  }

  TransportPlan plan;
  plan.cost = Tensor({kr, kg});
  LinearProgram lp;
  const std::size_t n = kr * kg;
  lp.c.resize(n);
  for (std::size_t i = 0; i < kr; ++i)
    for (std::size_t j = 0; j < kg; ++j) {
      plan.cost(i, j) = frechet_distance(stats_of(real.components[i]), stats_of(generated.components[j]));
      lp.c[i * kg + j] = plan.cost(i, j);
    }
  lp.a_ub = Tensor({kr + kg, n});
  lp.b_ub.resize(kr + kg);
  for (std::size_t i = 0; i < kr; ++i) {
    lp.b_ub[i] = real.components[i].weight;
    for (std::size_t j = 0; j < kg; ++j) lp.a_ub(i, i * kg + j) = 1.0;
  }
  for (std::size_t j = 0; j < kg; ++j) {
    lp.b_ub[kr + j] = generated.components[j].weight;
    for (std::size_t i = 0; i < kr; ++i) lp.a_ub(kr + j, i * kg + j) = 1.0;
  }
  lp.a_eq = Tensor({1, n}, 1.0);
  lp.b_eq = {1.0};

  const LpSolution sol = solve_lp(lp);
  plan.w = Tensor({kr, kg}, sol.x);
  plan.objective = std::max(0.0, sol.objective);
  return plan;
}

WindSummary wind_repeated(const Tensor& real, const Tensor& generated, std::size_t repeats, const GmmOptions& opts,
                          const Rng& rng) {
  if (repeats == 0) throw InvalidConfig("wind_repeated: repeats must be positive");
  WindSummary out;
  out.values.reserve(repeats);
  for (std::size_t r = 0; r < repeats; ++r) {
    Rng stream_r = rng.split(r);
    Rng stream_g = rng.split(r);
    const GmmFit fr = fit_gmm(real, opts, stream_r);
    const GmmFit fg = fit_gmm(generated, opts, stream_g);
    out.values.push_back(wind(fr.model, fg.model).objective);
  }
  for (double v : out.values) out.mean += v;
  out.mean /= static_cast<double>(repeats);
  double var = 0.0;
  for (double v : out.values) var += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(var / static_cast<double>(repeats));
  return out;
}

double multimodality(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || a.shape() != b.shape())
    throw ShapeMismatch("multimodality: expected matching C x S x d tensors, got " + shape_string(a.shape()) +
                        " and " + shape_string(b.shape()));
  const std::size_t pairs = a.dim(0) * a.dim(1);
  const std::size_t d = a.dim(2);
  if (pairs == 0) throw EmptyInput("multimodality: no feature pairs");
  double total = 0.0;
  for (std::size_t p = 0; p < pairs; ++p) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = a[p * d + k] - b[p * d + k];
      s += diff * diff;
    }
    total += std::sqrt(s);
  }
  return total / static_cast<double>(pairs);
}

}  // namespace said::metrics
