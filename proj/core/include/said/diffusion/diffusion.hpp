#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "said/numerics/rng.hpp"
#include "said/numerics/tensor.hpp"

namespace said::diffusion {

/// Cumulative signal levels alpha_bar[0..T] with alpha_bar[0] = 1.
class NoiseSchedule {
 public:
  /// Validates strict decrease and range (0, 1]. Throws InvalidConfig.
  explicit NoiseSchedule(std::vector<double> alpha_bar);

  /// Linear betas from beta_start to beta_end over T steps.
  static NoiseSchedule linear(std::size_t T = 1000, double beta_start = 1e-4, double beta_end = 2e-2);

  std::size_t steps() const noexcept { return alpha_bar_.size() - 1; }
  double alpha_bar(std::size_t t) const { return alpha_bar_.at(t); }
  std::span<const double> alpha_bars() const noexcept { return alpha_bar_; }

 private:
  std::vector<double> alpha_bar_;
};

enum class Sampler { DDPM, DDIM };

struct GuidanceConfig {
  double gamma = 2.0;
  Sampler sampler = Sampler::DDIM;
  std::size_t steps = 1000;
  double eta = 0.0;
};

/// Noise prediction eps(u_t, cond, t). A null `cond` requests the
/// unconditional estimate.
using Denoiser = std::function<Tensor(const Tensor& u_t, const Tensor* cond, std::size_t t)>;

/// sqrt(ab_t) * u0 + sqrt(1 - ab_t) * eps. Throws ShapeMismatch.
Tensor q_sample(const NoiseSchedule& schedule, const Tensor& u0, std::size_t t, const Tensor& eps);

/// eps_cond + gamma * (eps_cond - eps_uncond).
Tensor guided_noise(const Tensor& eps_cond, const Tensor& eps_uncond, double gamma);

/// Descending timesteps visited by a sampler with `steps` steps, evenly
/// spaced in [1, T] and ending at T. The implicit final target is t = 0.
std::vector<std::size_t> sampling_timesteps(std::size_t T, std::size_t steps);

/// One reverse update from t to s < t given the noise estimate. `z` is the
/// fresh Gaussian draw and is ignored when the step is deterministic.
Tensor ddim_step(const NoiseSchedule& schedule, const Tensor& x_t, const Tensor& eps, std::size_t t, std::size_t s,
                 double eta, const Tensor& z);
Tensor ddpm_step(const NoiseSchedule& schedule, const Tensor& x_t, const Tensor& eps, std::size_t t, std::size_t s,
                 const Tensor& z);

/// Runs the configured sampler from Gaussian noise and clamps to [0, 1].
/// Calls the denoiser twice per step when gamma > 0 and cond is set,
/// once otherwise.
Tensor sample(const Denoiser& denoiser, const Tensor* cond, std::size_t n, std::size_t k,
              const NoiseSchedule& schedule, const GuidanceConfig& cfg, Rng& rng);

/// Masked regeneration: entries with mask 1 are re-noised from u_ref before
/// each step and equal u_ref exactly in the output; entries with mask 0 are
/// generated. With an all-zero mask this reproduces sample() for the same rng.
/// Throws ShapeMismatch, and FormatError for a non-binary mask.
Tensor edit(const Denoiser& denoiser, const Tensor* cond, const Tensor& u_ref, const Tensor& mask,
            const NoiseSchedule& schedule, const GuidanceConfig& cfg, Rng& rng);

}  // namespace said::diffusion
