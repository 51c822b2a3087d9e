#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "said/diffusion/diffusion.hpp"
#include "said/error.hpp"

namespace said::diffusion {
namespace {

Denoiser zero_denoiser() {
  return [](const Tensor& x, const Tensor*, std::size_t) { return Tensor(x.shape()); };
}

// Exact noise predictor when every entry of u0 is N(mu, s^2) independently.
Denoiser gaussian_oracle(const NoiseSchedule& sched, double mu, double s) {
  return [&sched, mu, s](const Tensor& x, const Tensor*, std::size_t t) {
    const double a = sched.alpha_bar(t);
    const double gain = std::sqrt(1.0 - a) / (a * s * s + 1.0 - a);
    Tensor eps(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) eps[i] = gain * (x[i] - std::sqrt(a) * mu);
    return eps;
  };
}

TEST(NoiseSchedule, LinearDefaults) {
  const auto s = NoiseSchedule::linear();
  EXPECT_EQ(s.steps(), 1000u);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  for (std::size_t t = 1; t <= 1000; ++t) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  EXPECT_GT(s.alpha_bar(1000), 0.0);
  EXPECT_LT(s.alpha_bar(1000), 0.05);
  EXPECT_NEAR(s.alpha_bar(1), 1.0 - 1e-4, 1e-15);
  EXPECT_NEAR(s.alpha_bar(2), (1.0 - 1e-4) * (1.0 - (1e-4 + (2e-2 - 1e-4) / 999.0)), 1e-15);
}

TEST(NoiseSchedule, RejectsInvalidSequences) {
  EXPECT_THROW(NoiseSchedule({1.0}), InvalidConfig);
  EXPECT_THROW(NoiseSchedule({0.9, 0.5}), InvalidConfig);
  EXPECT_THROW(NoiseSchedule({1.0, 0.5, 0.5}), InvalidConfig);
  EXPECT_THROW(NoiseSchedule({1.0, 0.5, 0.0}), InvalidConfig);
  EXPECT_NO_THROW(NoiseSchedule({1.0, 0.5, 0.1}));
}

TEST(QSample, Examples) {
  const NoiseSchedule sched({1.0, 0.25});
  Rng rng(1);
  const Tensor u0 = rng.normal_tensor({3, 4});
  const Tensor eps = rng.normal_tensor({3, 4});
  EXPECT_EQ(max_abs_diff(q_sample(sched, u0, 0, eps), u0), 0.0);
  const Tensor from_zero = q_sample(sched, Tensor({3, 4}), 1, eps);
  EXPECT_LE(max_abs_diff(from_zero, eps * std::sqrt(0.75)), 1e-15);
  const Tensor one = q_sample(sched, Tensor::matrix({{1}}), 1, Tensor::matrix({{1}}));
  EXPECT_NEAR(one(0, 0), 1.3660254037844386, 1e-12);
  EXPECT_THROW(q_sample(sched, u0, 1, Tensor({4, 3})), ShapeMismatch);
}

TEST(QSample, VarianceMatchesSchedule) {
  const auto sched = NoiseSchedule::linear();
  Rng rng(2);
  for (std::size_t t : {10u, 250u, 999u}) {
    const Tensor eps = rng.normal_tensor({100000});
    const Tensor ut = q_sample(sched, Tensor({100000}), t, eps);
    double m = 0, v = 0;
    for (double x : ut.data()) m += x;
    m /= ut.size();
    for (double x : ut.data()) v += (x - m) * (x - m);
    v /= ut.size() - 1;
    EXPECT_NEAR(v / (1.0 - sched.alpha_bar(t)), 1.0, 0.02) << "t=" << t;
  }
}

TEST(GuidedNoise, Examples) {
  Rng rng(3);
  const Tensor c = rng.normal_tensor({5, 3}), u = rng.normal_tensor({5, 3});
  EXPECT_EQ(max_abs_diff(guided_noise(c, u, 0.0), c), 0.0);
  EXPECT_LE(max_abs_diff(guided_noise(c, u, 1.0), c * 2.0 - u), 1e-15);
  for (double g : {0.5, 2.0, 7.0}) EXPECT_LE(max_abs_diff(guided_noise(c, c, g), c), 1e-15);
}

TEST(GuidedNoise, AffineSuperposition) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a1 = rng.normal_tensor({6, 4}), b1 = rng.normal_tensor({6, 4});
    const Tensor a2 = rng.normal_tensor({6, 4}), b2 = rng.normal_tensor({6, 4});
    const double lam = rng.uniform(-2, 2), g = rng.uniform(0, 5);
    // Affine combinations (weights summing to one) commute with the map.
    const Tensor lhs = guided_noise(a1 * lam + a2 * (1 - lam), b1 * lam + b2 * (1 - lam), g);
    const Tensor rhs = guided_noise(a1, b1, g) * lam + guided_noise(a2, b2, g) * (1 - lam);
    EXPECT_LE(max_abs_diff(lhs, rhs), 1e-12);
  }
}

TEST(SamplingTimesteps, EvenlySpaced) {
  EXPECT_EQ(sampling_timesteps(1000, 10), (std::vector<std::size_t>{1000, 900, 800, 700, 600, 500, 400, 300, 200, 100}));
  const auto all = sampling_timesteps(7, 7);
  EXPECT_EQ(all, (std::vector<std::size_t>{7, 6, 5, 4, 3, 2, 1}));
  const auto odd = sampling_timesteps(1000, 333);
  EXPECT_EQ(odd.front(), 1000u);
  for (std::size_t i = 1; i < odd.size(); ++i) EXPECT_LT(odd[i], odd[i - 1]);
  EXPECT_GE(odd.back(), 1u);
  EXPECT_THROW(sampling_timesteps(10, 11), InvalidConfig);
  EXPECT_THROW(sampling_timesteps(10, 0), InvalidConfig);
}

TEST(Sample, ZeroDenoiserMatchesHandTrace) {
  const auto sched = NoiseSchedule::linear(1000);
  GuidanceConfig cfg;
  cfg.steps = 10;
  cfg.gamma = 0.0;
  Rng rng(5), replay(5);
  const Tensor out = sample(zero_denoiser(), nullptr, 400, 5, sched, cfg, rng);
  // With eps = 0 each step rescales by sqrt(ab_s / ab_t); the chain from
  // t = 1000 to 0 telescopes to 1 / sqrt(ab_1000).
  const Tensor x_T = replay.normal_tensor({400, 5});
  double x0_scale = 1.0;
  for (std::size_t t = 1000; t >= 100; t -= 100) {
    const std::size_t s = t - 100;
    x0_scale *= std::sqrt(sched.alpha_bar(s) / sched.alpha_bar(t));
  }
  EXPECT_NEAR(x0_scale, 1.0 / std::sqrt(sched.alpha_bar(1000)), 1e-9 * x0_scale);
  std::size_t interior = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double expect = std::clamp(x_T[i] * x0_scale, 0.0, 1.0);
    EXPECT_NEAR(out[i], expect, 1e-12);
    interior += expect > 0.0 && expect < 1.0;
  }
  EXPECT_GT(interior, 0u);
}

TEST(Sample, LinearDenoiserMatchesHandRolledDdim) {
  const NoiseSchedule sched({1.0, 0.9, 0.7, 0.4, 0.2, 0.1});
  const Denoiser lin = [](const Tensor& x, const Tensor*, std::size_t t) { return x * (0.1 * t); };
  GuidanceConfig cfg;
  cfg.steps = 5;
  cfg.gamma = 0.0;
  Rng rng(6), replay(6);
  const Tensor out = sample(lin, nullptr, 1, 30, sched, cfg, rng);
  Tensor x = replay.normal_tensor({1, 30});
  for (std::size_t t = 5; t >= 1; --t) {
    const double at = sched.alpha_bar(t), as = sched.alpha_bar(t - 1);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double e = 0.1 * t * x[i];
      const double x0 = (x[i] - std::sqrt(1 - at) * e) / std::sqrt(at);
      x[i] = std::sqrt(as) * x0 + std::sqrt(1 - as) * e;
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(out[i], std::clamp(x[i], 0.0, 1.0), 1e-12);
}

TEST(Sample, DenoiserCallCountsFollowGuidance) {
  const auto sched = NoiseSchedule::linear(100);
  std::map<bool, int> calls;  // keyed by "conditional"
  const Denoiser counting = [&](const Tensor& x, const Tensor* c, std::size_t) {
    ++calls[c != nullptr];
    return Tensor(x.shape());
  };
  const Tensor cond({4, 2});
  GuidanceConfig cfg;
  cfg.steps = 20;
  Rng rng(7);
  cfg.gamma = 2.0;
  sample(counting, &cond, 4, 3, sched, cfg, rng);
  EXPECT_EQ(calls[true], 20);
  EXPECT_EQ(calls[false], 20);
  calls.clear();
  cfg.gamma = 0.0;
  sample(counting, &cond, 4, 3, sched, cfg, rng);
  EXPECT_EQ(calls[true], 20);
  EXPECT_EQ(calls[false], 0);
  calls.clear();
  cfg.gamma = 3.0;
  sample(counting, nullptr, 4, 3, sched, cfg, rng);
  EXPECT_EQ(calls[true], 0);
  EXPECT_EQ(calls[false], 20);
}

TEST(Sample, GammaZeroWithoutConditionMatchesUnconditional) {
  const auto sched = NoiseSchedule::linear(200);
  const Denoiser d = [](const Tensor& x, const Tensor* c, std::size_t t) {
    return c ? x * 0.3 : x * (0.001 * t);
  };
  GuidanceConfig cfg;
  cfg.steps = 25;
  cfg.gamma = 0.0;
  Rng a(8), b(8);
  const Tensor x1 = sample(d, nullptr, 5, 4, sched, cfg, a);
  cfg.gamma = 4.0;  // ignored without a condition
  const Tensor x2 = sample(d, nullptr, 5, 4, sched, cfg, b);
  EXPECT_EQ(x1.values(), x2.values());
}

TEST(Sample, GuidanceUsesBothEstimates) {
  const NoiseSchedule sched({1.0, 0.5});
  const Tensor cond({1, 1});
  const Denoiser d = [](const Tensor& x, const Tensor* c, std::size_t) { return Tensor(x.shape(), c ? 0.2 : -0.1); };
  GuidanceConfig cfg;
  cfg.steps = 1;
  cfg.gamma = 2.0;
  Rng rng(9), replay(9);
  const Tensor out = sample(d, &cond, 1, 8, sched, cfg, rng);
  const Tensor x = replay.normal_tensor({1, 8});
  const double eps = 0.2 + 2.0 * (0.2 + 0.1);
  for (std::size_t i = 0; i < 8; ++i)
    EXPECT_NEAR(out[i], std::clamp((x[i] - std::sqrt(0.5) * eps) / std::sqrt(0.5), 0.0, 1.0), 1e-14);
}

TEST(Sample, DeterministicForFixedSeed) {
  const auto sched = NoiseSchedule::linear(100);
  for (Sampler s : {Sampler::DDIM, Sampler::DDPM}) {
    GuidanceConfig cfg;
    cfg.sampler = s;
    cfg.steps = 30;
    cfg.eta = 0.5;
    Rng a(10), b(10);
    const Denoiser d = gaussian_oracle(sched, 0.5, 0.2);
    EXPECT_EQ(sample(d, nullptr, 6, 3, sched, cfg, a).values(), sample(d, nullptr, 6, 3, sched, cfg, b).values());
  }
}

TEST(Sample, RejectsInvalidConfig) {
  const auto sched = NoiseSchedule::linear(50);
  Rng rng(11);
  GuidanceConfig cfg;
  cfg.steps = 51;
  EXPECT_THROW(sample(zero_denoiser(), nullptr, 2, 2, sched, cfg, rng), InvalidConfig);
  cfg.steps = 10;
  cfg.gamma = -1.0;
  EXPECT_THROW(sample(zero_denoiser(), nullptr, 2, 2, sched, cfg, rng), InvalidConfig);
  cfg.gamma = 1.0;
  const Denoiser bad = [](const Tensor&, const Tensor*, std::size_t) { return Tensor({1, 1}); };
  EXPECT_THROW(sample(bad, nullptr, 2, 2, sched, cfg, rng), ShapeMismatch);
}

struct Moments {
  double mean = 0, var = 0;
};

Moments moments(const Tensor& x) {
  Moments m;
  for (double v : x.data()) m.mean += v;
  m.mean /= x.size();
  for (double v : x.data()) m.var += (v - m.mean) * (v - m.mean);
  m.var /= x.size() - 1;
  return m;
}

// Gaussian data with the exact noise predictor makes every reverse step an
// affine map plus Gaussian noise, so the output marginal is Gaussian with
// moments given by a scalar recursion. Finite step counts shrink the variance
// below the data variance; the recursion captures that exactly.
Moments propagate_moments(const NoiseSchedule& sched, Sampler sampler, std::size_t steps, double eta, double mu,
                          double s) {
  const std::size_t T = sched.steps();
  std::vector<std::size_t> ts;
  for (std::size_t i = steps; i >= 1; --i) ts.push_back((i * T + steps / 2) / steps);
  ts.push_back(0);
  Moments m{0.0, 1.0};
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const double at = sched.alpha_bar(ts[i]), as = sched.alpha_bar(ts[i + 1]);
    const double g = std::sqrt(1 - at) / (at * s * s + 1 - at);
    // eps = g x - g sqrt(at) mu, x0 = a0 x + b0
    const double a0 = (1 - std::sqrt(1 - at) * g) / std::sqrt(at);
    const double b0 = std::sqrt(1 - at) * g * mu;
    double A, B, noise_var;
    if (sampler == Sampler::DDIM) {
      const double sig2 = eta * eta * (1 - as) / (1 - at) * (1 - at / as);
      const double d = std::sqrt(std::max(0.0, 1 - as - sig2));
      A = std::sqrt(as) * a0 + d * g;
      B = std::sqrt(as) * b0 - d * g * std::sqrt(at) * mu;
      noise_var = ts[i + 1] > 0 ? sig2 : 0.0;
    } else {
      const double beta = 1 - at / as;
      const double c0 = std::sqrt(as) * beta / (1 - at), ct = std::sqrt(1 - beta) * (1 - as) / (1 - at);
      A = c0 * a0 + ct;
      B = c0 * b0;
      noise_var = ts[i + 1] > 0 ? beta * (1 - as) / (1 - at) : 0.0;
    }
    m = {A * m.mean + B, A * A * m.var + noise_var};
  }
  return m;
}

TEST(Sample, SamplersMatchGaussianMomentRecursion) {
  const auto sched = NoiseSchedule::linear();
  const double mu = 0.5, s = 0.1;
  const Denoiser oracle = gaussian_oracle(sched, mu, s);
  struct Case {
    Sampler sampler;
    std::size_t steps;
    double eta;
  };
  std::uint64_t seed = 100;
  const std::size_t n = 10000;
  Moments ddpm_mc;
  for (const Case c : {Case{Sampler::DDPM, 1000, 0.0}, Case{Sampler::DDIM, 1000, 1.0}, Case{Sampler::DDIM, 1000, 0.0},
                       Case{Sampler::DDIM, 50, 0.0}, Case{Sampler::DDPM, 100, 0.0}}) {
    GuidanceConfig cfg;
    cfg.sampler = c.sampler;
    cfg.steps = c.steps;
    cfg.eta = c.eta;
    cfg.gamma = 0.0;
    Rng rng(seed++);
    const Moments mc = moments(sample(oracle, nullptr, 100, 100, sched, cfg, rng));
    const Moments ex = propagate_moments(sched, c.sampler, c.steps, c.eta, mu, s);
    const double se = std::sqrt(ex.var / n);
    EXPECT_NEAR(mc.mean, ex.mean, 3 * se) << "steps=" << c.steps << " eta=" << c.eta;
    EXPECT_NEAR(mc.var / ex.var, 1.0, 4 * std::sqrt(2.0 / n)) << "steps=" << c.steps << " eta=" << c.eta;
    if (c.steps == 1000) EXPECT_NEAR(ex.var / (s * s), 1.0, 0.08);
    if (c.sampler == Sampler::DDPM && c.steps == 1000) ddpm_mc = mc;
    if (c.sampler == Sampler::DDIM && c.eta == 1.0) EXPECT_NEAR(mc.mean, ddpm_mc.mean, 3 * std::sqrt(2.0) * se);
  }
}

TEST(DdimStep, EtaOneMatchesDdpmPosterior) {
  const auto sched = NoiseSchedule::linear(100);
  Rng rng(12);
  const Tensor x = rng.normal_tensor({4, 4}), e = rng.normal_tensor({4, 4}), z = rng.normal_tensor({4, 4});
  for (auto [t, s] : {std::pair<std::size_t, std::size_t>{100, 90}, {50, 49}, {10, 1}}) {
    EXPECT_LE(max_abs_diff(ddim_step(sched, x, e, t, s, 1.0, z), ddpm_step(sched, x, e, t, s, z)), 1e-12);
  }
}

Tensor checkerboard(std::size_t n, std::size_t k) {
  Tensor m({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) m(i, j) = (i + j) % 2 == 0 ? 1.0 : 0.0;
  return m;
}

TEST(Edit, AllOnesReturnsReference) {
  const auto sched = NoiseSchedule::linear(100);
  Rng rng(13);
  const Tensor ref = rng.normal_tensor({12, 4}) * 0.2;  // deliberately outside [0, 1] in places
  GuidanceConfig cfg;
  cfg.steps = 20;
  const Tensor cond({12, 3});
  const Tensor out = edit(gaussian_oracle(sched, 0.5, 0.2), &cond, ref, Tensor({12, 4}, 1.0), sched, cfg, rng);
  EXPECT_EQ(out.values(), ref.values());
}

TEST(Edit, AllZerosMatchesSampling) {
  const auto sched = NoiseSchedule::linear(100);
  const Denoiser d = gaussian_oracle(sched, 0.4, 0.3);
  for (Sampler s : {Sampler::DDIM, Sampler::DDPM}) {
    GuidanceConfig cfg;
    cfg.sampler = s;
    cfg.steps = 25;
    Rng a(14), b(14), ref_rng(99);
    const Tensor ref = ref_rng.normal_tensor({10, 5});
    const Tensor cond({10, 2});
    const Tensor edited = edit(d, &cond, ref, Tensor({10, 5}), sched, cfg, a);
    const Tensor sampled = sample(d, &cond, 10, 5, sched, cfg, b);
    EXPECT_EQ(edited.values(), sampled.values());
    EXPECT_EQ(a.counter(), b.counter());
  }
}

TEST(Edit, MixedMaskPinsEntriesExactly) {
  const auto sched = NoiseSchedule::linear(100);
  Rng rng(15);
  Tensor ref({9, 7});
  for (double& v : ref.data()) v = rng.uniform();
  const Tensor mask = checkerboard(9, 7);
  GuidanceConfig cfg;
  cfg.steps = 30;
  cfg.sampler = Sampler::DDPM;
  const Tensor out = edit(gaussian_oracle(sched, 0.5, 0.25), nullptr, ref, mask, sched, cfg, rng);
  std::size_t differing = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i] == 1.0)
      EXPECT_EQ(out[i], ref[i]);
    else
      differing += out[i] != ref[i];
    EXPECT_GE(out[i], 0.0);
    EXPECT_LE(out[i], 1.0);
  }
  EXPECT_GT(differing, 0u);
}

TEST(Edit, InjectedEntriesFollowForwardProcess) {
  const auto sched = NoiseSchedule::linear(100);
  const std::size_t n = 200, k = 50;
  const Tensor ref(Shape{n, k}, 0.5);
  const Tensor mask(Shape{n, k}, 1.0);
  std::map<std::size_t, Moments> seen;
  const Denoiser recording = [&](const Tensor& x, const Tensor*, std::size_t t) {
    seen[t] = moments(x);
    return Tensor(x.shape());
  };
  GuidanceConfig cfg;
  cfg.steps = 4;
  Rng rng(16);
  edit(recording, nullptr, ref, mask, sched, cfg, rng);
  ASSERT_EQ(seen.size(), 4u);
  for (const auto& [t, m] : seen) {
    const double a = sched.alpha_bar(t);
    EXPECT_NEAR(m.mean, std::sqrt(a) * 0.5, 4 * std::sqrt((1 - a) / (n * k))) << "t=" << t;
    EXPECT_NEAR(m.var / (1 - a), 1.0, 0.05) << "t=" << t;
  }
}

TEST(Edit, ValidatesMask) {
  const auto sched = NoiseSchedule::linear(10);
  Rng rng(17);
  GuidanceConfig cfg;
  cfg.steps = 5;
  const Tensor ref({3, 2});
  EXPECT_THROW(edit(zero_denoiser(), nullptr, ref, Tensor({2, 3}), sched, cfg, rng), ShapeMismatch);
  EXPECT_THROW(edit(zero_denoiser(), nullptr, ref, Tensor({3, 2}, 0.5), sched, cfg, rng), FormatError);
}

}  // namespace
}  // namespace said::diffusion
