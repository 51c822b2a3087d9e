#pragma once

#include <cstddef>
#include <vector>

#include "said/numerics/rng.hpp"
#include "said/numerics/tensor.hpp"

namespace said::metrics {

/// Mean vector (d) and covariance (d x d).
struct GaussianStats {
  Tensor mean;
  Tensor cov;
};

/// Sample mean and unbiased covariance of the rows of an M x d matrix.
/// Throws Degenerate for fewer than two rows.
GaussianStats gaussian_stats(const Tensor& features);

/// Squared 2-Wasserstein distance between Gaussians:
/// |mu_r - mu_g|^2 + tr(S_r + S_g - 2 (S_r^1/2 S_g S_r^1/2)^1/2).
/// Throws NotPSD and DimensionMismatch.
double frechet_distance(const GaussianStats& r, const GaussianStats& g);

struct GaussianComponent {
  double weight = 0.0;
  Tensor mean;
  Tensor cov;
};

struct LatentGaussianSet {
  std::vector<GaussianComponent> components;

  std::size_t dim() const { return components.empty() ? 0 : components.front().mean.size(); }
  /// Mean log-density of the rows of `x`.
  double mean_log_likelihood(const Tensor& x) const;
};

struct GmmOptions {
  std::size_t components = 5;
  std::size_t restarts = 3;
  std::size_t max_iter = 300;
  std::size_t kmeans_iter = 100;
  double tol = 1e-9;
  double ridge = 1e-6;
};

struct GmmFit {
  LatentGaussianSet model;
  /// Mean log-likelihood after each EM iteration of the winning restart.
  std::vector<double> log_likelihood;
  bool converged = false;
};

/// Full-covariance EM seeded by k-means++ and Lloyd iterations; the best
/// restart by log-likelihood wins. Throws Degenerate when there are fewer
/// rows than components.
GmmFit fit_gmm(const Tensor& features, const GmmOptions& opts, Rng& rng);

/// min c'x subject to A_ub x <= b_ub, A_eq x = b_eq, x >= 0.
struct LinearProgram {
  std::vector<double> c;
  Tensor a_ub;  // m_ub x n, may be empty
  std::vector<double> b_ub;
  Tensor a_eq;  // m_eq x n, may be empty
  std::vector<double> b_eq;
};

struct LpSolution {
  std::vector<double> x;
  double objective = 0.0;
  /// Multipliers with c - A_ub' y_ub - A_eq' y_eq >= 0 and y_ub <= 0.
  std::vector<double> dual_ub;
  std::vector<double> dual_eq;
  std::size_t pivots = 0;
};

/// Dense two-phase simplex with Bland's rule. Throws Infeasible, and
/// NumericalError for an unbounded objective.
LpSolution solve_lp(const LinearProgram& lp);

struct TransportPlan {
  Tensor w;     // K_r x K_g
  Tensor cost;  // K_r x K_g component distances
  double objective = 0.0;
};

/// The transport LP between mixture components with costs from
/// frechet_distance: row sums <= pi_r, column sums <= pi_g, total mass 1.
TransportPlan wind(const LatentGaussianSet& real, const LatentGaussianSet& generated);

struct WindSummary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over repeats
  std::vector<double> values;
};

/// Refits both mixtures per repeat from rng.split(repeat); both fits in a
/// repeat share that stream.
WindSummary wind_repeated(const Tensor& real, const Tensor& generated, std::size_t repeats, const GmmOptions& opts,
                          const Rng& rng);

/// Samples per subset in the multimodality comparison.
inline constexpr std::size_t kMultimodalitySubsetSize = 36;

/// Mean L2 distance between paired features. a, b: C x S x d.
/// Throws ShapeMismatch.
double multimodality(const Tensor& a, const Tensor& b);

}  // namespace said::metrics
