#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <vector>

#include "said/error.hpp"
#include "said/metrics/distances.hpp"
#include "said/metrics/vae.hpp"
#include "said/numerics/linalg.hpp"
#include "support/finite_diff.hpp"
#include "support/metrics_oracles.hpp"

namespace said::metrics {
namespace {

using testing::frechet_oracle;
using testing::lp_vertex_oracle;
using testing::random_mixture;
using testing::random_simplex;
using testing::random_spd;
using testing::transport_lp;

GaussianStats gaussian(std::vector<double> mean, Tensor cov) {
  return {Tensor::vector(std::move(mean)), std::move(cov)};
}

void expect_complementary_slackness(const LinearProgram& lp, const LpSolution& sol, double tol) {
  const std::size_t n = lp.c.size();
  std::vector<double> reduced = lp.c;
  for (std::size_t i = 0; i < lp.b_ub.size(); ++i) {
    EXPECT_LE(sol.dual_ub[i], tol);
    double ax = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      ax += lp.a_ub(i, j) * sol.x[j];
      reduced[j] -= lp.a_ub(i, j) * sol.dual_ub[i];
    }
    EXPECT_LE(ax, lp.b_ub[i] + tol);
    EXPECT_NEAR(sol.dual_ub[i] * (lp.b_ub[i] - ax), 0.0, tol);
  }
  for (std::size_t i = 0; i < lp.b_eq.size(); ++i) {
    double ax = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      ax += lp.a_eq(i, j) * sol.x[j];
      reduced[j] -= lp.a_eq(i, j) * sol.dual_eq[i];
    }
    EXPECT_NEAR(ax, lp.b_eq[i], tol);
  }
  for (std::size_t j = 0; j < n; ++j) {
    EXPECT_GE(sol.x[j], -tol);
    EXPECT_GE(reduced[j], -tol);
    EXPECT_NEAR(reduced[j] * sol.x[j], 0.0, tol);
  }
}

LatentGaussianSet mixture_1d(std::vector<double> weights, std::vector<double> means, double var) {
  LatentGaussianSet g;
  for (std::size_t i = 0; i < weights.size(); ++i)
    g.components.push_back({weights[i], Tensor::vector({means[i]}), Tensor::matrix({{var}})});
  return g;
}

// --- Gaussian statistics and FD -------------------------------------------

TEST(GaussianStats, UnbiasedHandCase) {
  const Tensor x = Tensor::matrix({{1, 2}, {3, 2}, {5, 8}});
  const GaussianStats s = gaussian_stats(x);
  EXPECT_DOUBLE_EQ(s.mean[0], 3.0);
  EXPECT_DOUBLE_EQ(s.mean[1], 4.0);
  EXPECT_DOUBLE_EQ(s.cov(0, 0), 4.0);   // (4 + 0 + 4) / 2
  EXPECT_DOUBLE_EQ(s.cov(1, 1), 12.0);  // (4 + 4 + 16) / 2
  EXPECT_DOUBLE_EQ(s.cov(0, 1), 6.0);   // (4 + 0 + 8) / 2
  EXPECT_THROW(gaussian_stats(Tensor::matrix({{1, 2}})), Degenerate);
}

TEST(FrechetDistance, OneDimensionalClosedForm) {
  const auto a = gaussian({0.0}, Tensor::matrix({{1.0}}));
  const auto b = gaussian({1.0}, Tensor::matrix({{4.0}}));
  EXPECT_NEAR(frechet_distance(a, b), 2.0, 1e-9);
  EXPECT_NEAR(frechet_distance(b, a), 2.0, 1e-9);
}

TEST(FrechetDistance, ZeroForIdenticalMoments) {
  Rng rng(3);
  const auto a = gaussian({0.5, -1.0, 2.0}, random_spd(rng, 3));
  EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-8);
  auto b = a;
  b.mean[1] += 1e-3;
  EXPECT_GT(frechet_distance(a, b), 0.0);
}

TEST(FrechetDistance, MatchesEigenvalueOracleAndIsSymmetric) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 1 + rng.below(6);
    const GaussianStats a{rng.normal_tensor({d}), random_spd(rng, d)};
    const GaussianStats b{rng.normal_tensor({d}), random_spd(rng, d)};
    const double ab = frechet_distance(a, b);
    EXPECT_NEAR(ab, frechet_oracle(a, b), 1e-8 * (1.0 + ab));
    EXPECT_NEAR(ab, frechet_distance(b, a), 1e-9 * (1.0 + ab));
    EXPECT_GE(ab, 0.0);
  }
}

TEST(FrechetDistance, CommutingCovariancesReduceToPerAxisTerms) {
  const auto a = gaussian({0.0, 1.0}, Tensor::matrix({{4.0, 0.0}, {0.0, 9.0}}));
  const auto b = gaussian({3.0, 1.0}, Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}}));
  // 9 + (2 - 1)^2 + (3 - 1)^2
  EXPECT_NEAR(frechet_distance(a, b), 14.0, 1e-12);
}

TEST(FrechetDistance, SingularCovarianceIsAccepted) {
  const auto a = gaussian({0.0, 0.0}, Tensor::matrix({{1.0, 1.0}, {1.0, 1.0}}));
  const auto b = gaussian({0.0, 0.0}, Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}}));
  EXPECT_NEAR(frechet_distance(a, b), frechet_oracle(a, b), 1e-9);
}

TEST(FrechetDistance, Errors) {
  const auto good = gaussian({0.0, 0.0}, Tensor::identity(2));
  const auto neg = gaussian({0.0, 0.0}, Tensor::matrix({{1.0, 0.0}, {0.0, -1.0}}));
  EXPECT_THROW(frechet_distance(good, neg), NotPSD);
  EXPECT_THROW(frechet_distance(neg, good), NotPSD);
  EXPECT_THROW(frechet_distance(good, gaussian({0.0}, Tensor::identity(1))), DimensionMismatch);
}

// --- GMM -------------------------------------------------------------------

TEST(FitGmm, SingleComponentIsClosedFormMle) {
  Rng data(5);
  Tensor x({200, 3});
  for (std::size_t n = 0; n < 200; ++n) {
    const double z0 = data.normal(), z1 = data.normal(), z2 = data.normal();
    x(n, 0) = 1.0 + z0;
    x(n, 1) = -2.0 + 0.5 * z0 + 0.3 * z1;
    x(n, 2) = 0.2 * z2;
  }
  GmmOptions opts;
  opts.components = 1;
  Rng rng(1);
  const GmmFit fit = fit_gmm(x, opts, rng);
  ASSERT_EQ(fit.model.components.size(), 1u);
  const GaussianStats s = gaussian_stats(x);
  const auto& c = fit.model.components[0];
  EXPECT_NEAR(c.weight, 1.0, 1e-12);
  const double scale = 199.0 / 200.0;  // maximum-likelihood normalization
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(c.mean[i], s.mean[i], 1e-9);
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_NEAR(c.cov(i, j), s.cov(i, j) * scale + (i == j ? opts.ridge : 0.0), 1e-9);
  }
}

TEST(FitGmm, RecoversSeparatedClusters) {
  Rng data(8);
  const std::size_t per = 400;
  Tensor x({2 * per, 2});
  double sums[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t n = 0; n < 2 * per; ++n) {
    const std::size_t c = n % 2;
    const double cx = c == 0 ? -10.0 : 10.0;
    x(n, 0) = cx + data.normal();
    x(n, 1) = 0.5 * data.normal();
    sums[c][0] += x(n, 0);
    sums[c][1] += x(n, 1);
  }
  GmmOptions opts;
  opts.components = 2;
  Rng rng(2);
  const GmmFit fit = fit_gmm(x, opts, rng);
  for (std::size_t c = 0; c < 2; ++c) {
    const double tx = sums[c][0] / per, ty = sums[c][1] / per;
    // Components are unordered; match by the sign of the x mean.
    const auto& comp = fit.model.components[(fit.model.components[0].mean[0] < 0.0) == (c == 0) ? 0 : 1];
    EXPECT_NEAR(comp.mean[0], tx, 1e-3);
    EXPECT_NEAR(comp.mean[1], ty, 1e-3);
    EXPECT_NEAR(comp.weight, 0.5, 1e-3);
  }
}

TEST(FitGmm, LogLikelihoodIsMonotone) {
  Rng data(21);
  Tensor x({300, 2});
  for (std::size_t n = 0; n < 300; ++n) {
    const double c = static_cast<double>(n % 3);
    x(n, 0) = c * 1.5 + data.normal();
    x(n, 1) = c * c * 0.7 + data.normal();
  }
  GmmOptions opts;
  opts.components = 3;
  opts.restarts = 1;
  opts.tol = 1e-12;
  Rng rng(4);
  const GmmFit fit = fit_gmm(x, opts, rng);
  ASSERT_GE(fit.log_likelihood.size(), 3u);
  for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i)
    EXPECT_GE(fit.log_likelihood[i], fit.log_likelihood[i - 1] - 1e-9) << "iteration " << i;
  EXPECT_NEAR(fit.model.mean_log_likelihood(x), fit.log_likelihood.back(), 1e-9);
}

TEST(FitGmm, DeterministicAndWeightsSumToOne) {
  Rng data(9);
  const Tensor x = data.normal_tensor({120, 3});
  GmmOptions opts;
  Rng r1(77), r2(77);
  const GmmFit a = fit_gmm(x, opts, r1);
  const GmmFit b = fit_gmm(x, opts, r2);
  double total = 0.0;
  for (std::size_t k = 0; k < a.model.components.size(); ++k) {
    total += a.model.components[k].weight;
    EXPECT_EQ(max_abs_diff(a.model.components[k].mean, b.model.components[k].mean), 0.0);
    EXPECT_EQ(max_abs_diff(a.model.components[k].cov, b.model.components[k].cov), 0.0);
    EXPECT_LT(linalg::asymmetry(a.model.components[k].cov), 1e-12);
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(FitGmm, DuplicatePointsStayFinite) {
  Tensor x({12, 2});
  for (std::size_t n = 0; n < 12; ++n) x(n, 0) = n < 6 ? 0.0 : 1.0;
  GmmOptions opts;
  Rng rng(0);
  const GmmFit fit = fit_gmm(x, opts, rng);
  for (const auto& c : fit.model.components) {
    EXPECT_TRUE(c.mean.all_finite());
    EXPECT_TRUE(c.cov.all_finite());
  }
  EXPECT_TRUE(std::isfinite(fit.log_likelihood.back()));
}

TEST(FitGmm, FewerSamplesThanComponents) {
  GmmOptions opts;
  Rng rng(0);
  EXPECT_THROW(fit_gmm(Tensor({4, 2}), opts, rng), Degenerate);
}

// --- LP --------------------------------------------------------------------

TEST(SolveLp, TextbookProblem) {
  // max 3x + 5y st x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36.
  LinearProgram lp;
  lp.c = {-3.0, -5.0};
  lp.a_ub = Tensor::matrix({{1, 0}, {0, 2}, {3, 2}});
  lp.b_ub = {4, 12, 18};
  const LpSolution sol = solve_lp(lp);
  EXPECT_NEAR(sol.objective, -36.0, 1e-12);
  EXPECT_NEAR(sol.x[0], 2.0, 1e-12);
  EXPECT_NEAR(sol.x[1], 6.0, 1e-12);
  expect_complementary_slackness(lp, sol, 1e-10);
}

TEST(SolveLp, BealeCyclingExampleTerminates) {
  LinearProgram lp;
  lp.c = {-0.75, 20.0, -0.5, 6.0};
  lp.a_ub = Tensor::matrix({{0.25, -8, -1, 9}, {0.5, -12, -0.5, 3}, {0, 0, 1, 0}});
  lp.b_ub = {0, 0, 1};
  const LpSolution sol = solve_lp(lp);
  EXPECT_NEAR(sol.objective, -1.25, 1e-12);
  expect_complementary_slackness(lp, sol, 1e-10);
}

TEST(SolveLp, NegativeRightHandSideAndEqualities) {
  // x + y >= 2 written as -x - y <= -2; x - y = 0; min x + 2y -> (1, 1), 3.
  LinearProgram lp;
  lp.c = {1.0, 2.0};
  lp.a_ub = Tensor::matrix({{-1, -1}});
  lp.b_ub = {-2};
  lp.a_eq = Tensor::matrix({{1, -1}});
  lp.b_eq = {0};
  const LpSolution sol = solve_lp(lp);
  EXPECT_NEAR(sol.objective, 3.0, 1e-12);
  expect_complementary_slackness(lp, sol, 1e-10);
}

TEST(SolveLp, RedundantEqualityRows) {
  LinearProgram lp;
  lp.c = {1.0, 1.0, 0.0};
  lp.a_eq = Tensor::matrix({{1, 1, 1}, {2, 2, 2}});
  lp.b_eq = {1, 2};
  const LpSolution sol = solve_lp(lp);
  EXPECT_NEAR(sol.objective, 0.0, 1e-12);
  EXPECT_NEAR(sol.x[2], 1.0, 1e-12);
}

TEST(SolveLp, InfeasibleAndUnbounded) {
  LinearProgram bad;
  bad.c = {1.0, 1.0};
  bad.a_ub = Tensor::matrix({{1, 1}});
  bad.b_ub = {1};
  bad.a_eq = Tensor::matrix({{1, 1}});
  bad.b_eq = {2};
  EXPECT_THROW(solve_lp(bad), Infeasible);

  LinearProgram open;
  open.c = {0.0, -1.0};
  open.a_ub = Tensor::matrix({{1, -1}});
  open.b_ub = {1};
  EXPECT_THROW(solve_lp(open), NumericalError);
}

TEST(SolveLp, RandomProblemsMatchVertexEnumeration) {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + rng.below(4);
    const std::size_t m = 1 + rng.below(4);
    LinearProgram lp;
    lp.c.resize(n);
    for (auto& c : lp.c) c = rng.normal();
    lp.a_ub = Tensor({m + 1, n});
    lp.b_ub.resize(m + 1);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) lp.a_ub(i, j) = rng.normal();
      lp.b_ub[i] = rng.uniform(0.1, 2.0);  // origin feasible
    }
    for (std::size_t j = 0; j < n; ++j) lp.a_ub(m, j) = 1.0;  // bounded region
    lp.b_ub[m] = 3.0;
    const LpSolution sol = solve_lp(lp);
    EXPECT_NEAR(sol.objective, lp_vertex_oracle(lp), 1e-9) << "trial " << trial;
    expect_complementary_slackness(lp, sol, 1e-9);
  }
}

TEST(SolveLp, TransportProblemsMatchVertexEnumeration) {
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t kr = 1 + rng.below(3), kg = 1 + rng.below(3);
    Tensor d({kr, kg});
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = rng.uniform(0.0, 5.0);
    const LinearProgram lp = transport_lp(d, random_simplex(rng, kr), random_simplex(rng, kg));
    const LpSolution sol = solve_lp(lp);
    EXPECT_NEAR(sol.objective, lp_vertex_oracle(lp), 1e-7) << "trial " << trial;
    expect_complementary_slackness(lp, sol, 1e-7);
  }
}

// --- WInD ------------------------------------------------------------------

TEST(Wind, IdenticalMixturesGiveZero) {
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const auto g = random_mixture(rng, 1 + rng.below(5), 3);
    const TransportPlan plan = wind(g, g);
    EXPECT_NEAR(plan.objective, 0.0, 1e-8);
    EXPECT_GE(plan.objective, 0.0);
  }
}

TEST(Wind, SingleComponentsReduceToFrechet) {
  Rng rng(17);
  const auto a = random_mixture(rng, 1, 4);
  const auto b = random_mixture(rng, 1, 4);
  const double fd = frechet_distance({a.components[0].mean, a.components[0].cov},
                                     {b.components[0].mean, b.components[0].cov});
  EXPECT_NEAR(wind(a, b).objective, fd, 1e-10);
}

TEST(Wind, HandSetTwoComponentCase) {
  // Unit variances in 1D: d_ij = (m_i - m_j)^2 = [[0, 4], [1, 1]].
  const auto r = mixture_1d({0.5, 0.5}, {0.0, 1.0}, 1.0);
  const auto g = mixture_1d({0.3, 0.7}, {0.0, 2.0}, 1.0);
  const TransportPlan plan = wind(r, g);
  EXPECT_NEAR(plan.cost(0, 1), 4.0, 1e-12);
  EXPECT_NEAR(plan.cost(1, 0), 1.0, 1e-12);
  // w00 = 0.3, w01 = 0.2, w11 = 0.5.
  EXPECT_NEAR(plan.objective, 1.3, 1e-12);
  EXPECT_NEAR(plan.w(0, 0), 0.3, 1e-12);
  EXPECT_NEAR(plan.w(0, 1), 0.2, 1e-12);
  EXPECT_NEAR(plan.w(1, 1), 0.5, 1e-12);
  EXPECT_NEAR(plan.objective, lp_vertex_oracle(transport_lp(plan.cost, {0.5, 0.5}, {0.3, 0.7})), 1e-12);
}

TEST(Wind, PlanSatisfiesMarginals) {
  Rng rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = random_mixture(rng, 1 + rng.below(5), 2);
    const auto b = random_mixture(rng, 1 + rng.below(5), 2);
    const TransportPlan plan = wind(a, b);
    double total = 0.0;
    for (std::size_t i = 0; i < a.components.size(); ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < b.components.size(); ++j) {
        EXPECT_GE(plan.w(i, j), 0.0);
        row += plan.w(i, j);
      }
      EXPECT_LE(row, a.components[i].weight + 1e-9);
      total += row;
    }
    for (std::size_t j = 0; j < b.components.size(); ++j) {
      double col = 0.0;
      for (std::size_t i = 0; i < a.components.size(); ++i) col += plan.w(i, j);
      EXPECT_LE(col, b.components[j].weight + 1e-9);
    }
    EXPECT_NEAR(total, 1.0, 1e-8);
    if (a.components.size() <= 3 && b.components.size() <= 3) {
      std::vector<double> pa, pb;
      for (const auto& c : a.components) pa.push_back(c.weight);
      for (const auto& c : b.components) pb.push_back(c.weight);
      EXPECT_NEAR(plan.objective, lp_vertex_oracle(transport_lp(plan.cost, pa, pb)), 1e-7);
    }
  }
}

TEST(Wind, RejectsInvalidWeights) {
  const auto good = mixture_1d({1.0}, {0.0}, 1.0);
  const auto bad = mixture_1d({0.5, 0.4}, {0.0, 1.0}, 1.0);
  EXPECT_THROW(wind(good, bad), Infeasible);
}

TEST(WindRepeated, IdenticalInputsGiveZeroAndDeterminism) {
  Rng data(23);
  const Tensor x = data.normal_tensor({60, 3});
  Tensor y = data.normal_tensor({60, 3});
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 1.5 * y[i] + 0.3;
  GmmOptions opts;
  opts.restarts = 1;
  const Rng master(99);
  const WindSummary same = wind_repeated(x, x, 10, opts, master);
  EXPECT_NEAR(same.mean, 0.0, 1e-8);
  EXPECT_NEAR(same.std, 0.0, 1e-8);
  const WindSummary a = wind_repeated(x, y, 10, opts, master);
  const WindSummary b = wind_repeated(x, y, 10, opts, master);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_GE(a.std, 0.0);
  EXPECT_GT(a.mean, 0.0);
  double mean = std::accumulate(a.values.begin(), a.values.end(), 0.0) / 10.0, var = 0.0;
  for (double v : a.values) var += (v - mean) * (v - mean);
  EXPECT_NEAR(a.std, std::sqrt(var / 10.0), 1e-12);
}

// --- Multimodality ---------------------------------------------------------

TEST(Multimodality, IdenticalAndUnitOffset) {
  Rng rng(29);
  const Tensor a = rng.normal_tensor({4, 36, 5});
  EXPECT_EQ(multimodality(a, a), 0.0);
  Tensor b = a;
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t s = 0; s < 36; ++s) b.at(c, s, (c + s) % 5) += 1.0;
  EXPECT_NEAR(multimodality(a, b), 1.0, 1e-9);
}

TEST(Multimodality, MatchesScalarLoop) {
  Rng rng(37);
  const Tensor a = rng.normal_tensor({3, 7, 4});
  const Tensor b = rng.normal_tensor({3, 7, 4});
  double total = 0.0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 7; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += (a.at(c, i, k) - b.at(c, i, k)) * (a.at(c, i, k) - b.at(c, i, k));
      total += std::sqrt(s);
    }
  EXPECT_NEAR(multimodality(a, b), total / 21.0, 1e-12);
}

TEST(Multimodality, ShapeMismatch) {
  EXPECT_THROW(multimodality(Tensor({2, 3, 4}), Tensor({2, 3, 5})), ShapeMismatch);
  EXPECT_THROW(multimodality(Tensor({6, 4}), Tensor({6, 4})), ShapeMismatch);
}

// --- VAE -------------------------------------------------------------------

VaeConfig small_vae() {
  VaeConfig c;
  c.channels = 3;
  c.latent = 2;
  c.hidden = 4;
  c.window = 8;
  c.stride = 4;
  return c;
}

TEST(Vae, CyclicalBetaSchedule) {
  // 4 cycles of 25 steps, ramp over the first 12.5.
  EXPECT_DOUBLE_EQ(cyclical_beta(0, 100, 4, 0.5, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(cyclical_beta(5, 100, 4, 0.5, 1.0), 0.4);
  EXPECT_DOUBLE_EQ(cyclical_beta(13, 100, 4, 0.5, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(cyclical_beta(24, 100, 4, 0.5, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(cyclical_beta(25, 100, 4, 0.5, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(cyclical_beta(30, 100, 4, 0.5, 2.0), 0.8);
}

TEST(Vae, KlClosedForm) {
  EXPECT_EQ(kl_standard_normal(Tensor({1, 4}), Tensor({1, 4})), 0.0);
  // 0.5 (mu^2 + s^2 - 1 - ln s^2) with mu = 1, s^2 = e.
  const double expected = 0.5 * (1.0 + std::exp(1.0) - 2.0);
  EXPECT_NEAR(kl_standard_normal(Tensor::vector({1.0}), Tensor::vector({1.0})), expected, 1e-15);
  const ad::Var kl = kl_standard_normal(ad::constant(Tensor::vector({1.0})), ad::constant(Tensor::vector({1.0})));
  EXPECT_NEAR(kl.value().item(), expected, 1e-15);
}

TEST(Vae, ChannelWeightsZeroForConstantChannels) {
  const Tensor s = Tensor::matrix({{0, 0.5, 1}, {2, 0.5, 1}});
  const Tensor w = channel_weights(std::span<const Tensor>(&s, 1));
  EXPECT_DOUBLE_EQ(w[0], 1.0);  // population std of {0, 2}
  EXPECT_EQ(w[1], 0.0);
  EXPECT_EQ(w[2], 0.0);
}

TEST(Vae, WeightedLossesHandCase) {
  const Tensor u = Tensor::matrix({{0, 1}, {1, 1}});
  const Tensor u_hat = Tensor::matrix({{0.5, 1}, {0.5, 0}});
  const Tensor w = Tensor::vector({2.0, 1.0});
  // reconstruction: (2*0.5)^2 + (2*0.5)^2 + 1 = 3; velocity: gaps (1, 1) -> 4 + 1.
  EXPECT_DOUBLE_EQ(weighted_reconstruction(u, ad::constant(u_hat), w).value().item(), 3.0);
  EXPECT_DOUBLE_EQ(weighted_velocity(u, ad::constant(u_hat), w).value().item(), 5.0);
  EXPECT_EQ(weighted_velocity(Tensor({1, 2}), ad::constant(Tensor({1, 2})), w).value().item(), 0.0);
}

TEST(Vae, VelocityLossIgnoresPerChannelShift) {
  Rng rng(43);
  const Tensor u = rng.normal_tensor({10, 3});
  Tensor u_hat = rng.normal_tensor({10, 3});
  const Tensor w = Tensor::vector({1.0, 0.5, 2.0});
  const double base = weighted_velocity(u, ad::constant(u_hat), w).value().item();
  for (std::size_t n = 0; n < 10; ++n)
    for (std::size_t k = 0; k < 3; ++k) u_hat(n, k) += 0.3 * static_cast<double>(k + 1);
  EXPECT_NEAR(weighted_velocity(u, ad::constant(u_hat), w).value().item(), base, 1e-12);
}

TEST(Vae, ForwardShapesAndRange) {
  Rng rng(1);
  VaeConfig cfg = small_vae();
  const Vae vae(cfg, rng);
  const Tensor u = rng.normal_tensor({8, 3});
  const VaeOutput out = vae.forward(u, Tensor({2}));
  EXPECT_EQ(out.mu.shape(), (Shape{1, 2}));
  EXPECT_EQ(out.logvar.shape(), (Shape{1, 2}));
  ASSERT_EQ(out.recon.shape(), (Shape{8, 3}));
  for (double v : out.recon.value().values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_THROW(vae.forward(Tensor({7, 3}), Tensor({2})), ShapeMismatch);
  cfg.window = 10;
  EXPECT_THROW(Vae(cfg, rng), InvalidConfig);
}

TEST(Vae, BetaZeroRemovesKlFromGradient) {
  Rng rng(2);
  Vae vae(small_vae(), rng);
  const Tensor u = rng.normal_tensor({8, 3});
  const Tensor eps = rng.normal_tensor({2});
  auto grads = [&](bool with_kl) {
    for (auto& [n, p] : vae.parameters()) p.zero_grad();
    if (with_kl) {
      ad::backward(vae_loss(vae, u, eps, 0.0).total);
    } else {
      const VaeOutput out = vae.forward(u, eps);
      ad::backward(ad::add(weighted_reconstruction(u, out.recon, vae.channel_weight()),
                           weighted_velocity(u, out.recon, vae.channel_weight())));
    }
    std::vector<Tensor> g;
    for (auto& [n, p] : vae.parameters()) g.push_back(p.grad());
    return g;
  };
  const auto a = grads(true);
  const auto b = grads(false);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(max_abs_diff(a[i], b[i]), 0.0);
}

TEST(Vae, LossGradientMatchesFiniteDifferences) {
  Rng rng(3);
  Vae vae(small_vae(), rng);
  Rng data(4);
  Tensor u = data.normal_tensor({8, 3});
  for (auto& v : u.data()) v = 0.5 + 0.2 * v;
  const Tensor eps = data.normal_tensor({2});
  for (auto& [n, p] : vae.parameters()) p.zero_grad();
  ad::backward(vae_loss(vae, u, eps, 0.7).total);
  std::size_t checked = 0, within = 0;
  for (auto& [name, p] : vae.parameters()) {
    const Tensor g = p.grad();
    const Tensor fd =
        testing::central_difference(p, [&] { return vae_loss(vae, u, eps, 0.7).total.value().item(); }, 1e-6);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ++checked;
      if (std::abs(g[i] - fd[i]) <= 1e-4 * std::max(1.0, std::abs(fd[i]))) ++within;
    }
  }
  // ReLU kinks can break a handful of central differences.
  EXPECT_GE(static_cast<double>(within), 0.98 * static_cast<double>(checked));
}

TEST(Vae, ExtractFeaturesAveragesStridedWindows) {
  Rng rng(5);
  const Vae vae(small_vae(), rng);
  const Tensor seq = rng.normal_tensor({17, 3});
  // Windows start at 0, 4 and 8.
  Tensor manual({2});
  for (std::size_t s : {0u, 4u, 8u}) {
    Tensor w({8, 3});
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t k = 0; k < 3; ++k) w(n, k) = seq(s + n, k);
    manual += vae.latent_mean(w);
  }
  manual *= 1.0 / 3.0;
  const Tensor f = extract_features(vae, seq);
  EXPECT_LT(max_abs_diff(f, manual), 1e-14);
  EXPECT_EQ(max_abs_diff(f, extract_features(vae, seq)), 0.0);
  const std::vector<Tensor> both{seq, seq};
  const Tensor rows = extract_features(vae, both);
  EXPECT_EQ(rows.shape(), (Shape{2, 2}));
  EXPECT_EQ(rows(0, 0), rows(1, 0));
  EXPECT_THROW(extract_features(vae, Tensor({7, 3})), TooShort);
}

TEST(Vae, SaveLoadRoundTrip) {
  Rng rng(6);
  Vae vae(small_vae(), rng);
  vae.set_channel_weight(Tensor::vector({1.0, 0.0, 3.0}));
  const auto dir = std::filesystem::temp_directory_path() / "said_vae_roundtrip";
  std::filesystem::remove_all(dir);
  save_vae(dir, vae);
  const Vae back = load_vae(dir);
  const Tensor seq = rng.normal_tensor({12, 3});
  EXPECT_LT(max_abs_diff(extract_features(vae, seq), extract_features(back, seq)), 1e-4);
  EXPECT_EQ(back.channel_weight().values(), vae.channel_weight().values());
  std::filesystem::remove_all(dir);
}

double deterministic_reconstruction(const Vae& vae, const Tensor& u) {
  const auto [mu, logvar] = vae.encode(ad::constant(u));
  return weighted_reconstruction(u, vae.decode(mu), vae.channel_weight()).value().item();
}

TEST(Vae, OverfitsSingleWindow) {
  VaeConfig cfg;
  cfg.channels = 4;
  cfg.latent = 4;
  cfg.hidden = 16;
  cfg.window = 16;
  cfg.batch = 1;
  cfg.lr = 1e-3;
  cfg.weight_decay = 0.0;
  Tensor u({16, 4});
  for (std::size_t n = 0; n < 16; ++n)
    for (std::size_t k = 0; k < 4; ++k)
      u(n, k) = 0.5 + 0.3 * std::sin(0.4 * static_cast<double>(n) + static_cast<double>(k));
  const std::vector<Tensor> data{u};
  cfg.steps = 0;
  Rng r0(7);
  const Vae initial = train_vae(data, cfg, r0);
  cfg.steps = 2000;
  Rng r1(7);
  const Vae trained = train_vae(data, cfg, r1);
  const double before = deterministic_reconstruction(initial, u);
  const double after = deterministic_reconstruction(trained, u);
  EXPECT_LT(after, 0.1 * before) << "before " << before << " after " << after;
}

TEST(Vae, TrainingRejectsShortData) {
  VaeConfig cfg = small_vae();
  cfg.steps = 1;
  Rng rng(0);
  const std::vector<Tensor> data{Tensor({5, 3})};
  EXPECT_THROW(train_vae(data, cfg, rng), TooShort);
}

}  // namespace
}  // namespace said::metrics
