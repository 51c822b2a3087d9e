#include "said/diffusion/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "said/error.hpp"

namespace said::diffusion {

namespace {

constexpr std::uint64_t kEditStreamTag = 0x65646974;

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeMismatch(std::string(what) + ": shape mismatch");
}

void validate(const GuidanceConfig& cfg, const NoiseSchedule& schedule) {
  if (!(cfg.gamma >= 0.0) || !std::isfinite(cfg.gamma)) throw InvalidConfig("guidance gamma must be finite and >= 0");
  if (!(cfg.eta >= 0.0)) throw InvalidConfig("eta must be >= 0");
  if (cfg.steps == 0 || cfg.steps > schedule.steps())
    throw InvalidConfig("sampling steps must be in [1, " + std::to_string(schedule.steps()) + "]");
}

Tensor predict(const Denoiser& denoiser, const Tensor& x, const Tensor* cond, std::size_t t, double gamma) {
  if (cond == nullptr) return denoiser(x, nullptr, t);
  Tensor eps_c = denoiser(x, cond, t);
  if (gamma == 0.0) return eps_c;
  const Tensor eps_u = denoiser(x, nullptr, t);
  return guided_noise(eps_c, eps_u, gamma);
}

bool step_draws_noise(const GuidanceConfig& cfg, std::size_t s) {
  if (s == 0) return false;
  return cfg.sampler == Sampler::DDPM || cfg.eta > 0.0;
}

void clamp_unit(Tensor& x) {
  for (double& v : x.data()) v = std::clamp(v, 0.0, 1.0);
}

// Shared loop of sample() and edit(). `inject` rewrites x_t before each
// denoiser call; it is empty for plain sampling.
template <typename Inject>
Tensor run(const Denoiser& denoiser, const Tensor* cond, Tensor x, const NoiseSchedule& schedule,
           const GuidanceConfig& cfg, Rng& rng, Inject&& inject) {
  const std::vector<std::size_t> ts = sampling_timesteps(schedule.steps(), cfg.steps);
  const Tensor no_noise(x.shape());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const std::size_t t = ts[i];
    const std::size_t s = i + 1 < ts.size() ? ts[i + 1] : 0;
    inject(x, t);
    const Tensor eps = predict(denoiser, x, cond, t, cfg.gamma);
    check_same_shape(eps, x, "denoiser output");
    const Tensor z = step_draws_noise(cfg, s) ? rng.normal_tensor(x.shape()) : no_noise;
    x = cfg.sampler == Sampler::DDIM ? ddim_step(schedule, x, eps, t, s, cfg.eta, z)
                                     : ddpm_step(schedule, x, eps, t, s, z);
  }
  return x;
}

}  // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {
  if (alpha_bar_.size() < 2) throw InvalidConfig("noise schedule needs at least one step");
  if (alpha_bar_[0] != 1.0) throw InvalidConfig("alpha_bar[0] must be 1");
  for (std::size_t t = 1; t < alpha_bar_.size(); ++t) {
    const double a = alpha_bar_[t];
    if (!(a > 0.0 && a < alpha_bar_[t - 1]))
      throw InvalidConfig("alpha_bar must be strictly decreasing in (0, 1] at t=" + std::to_string(t));
  }
}

NoiseSchedule NoiseSchedule::linear(std::size_t T, double beta_start, double beta_end) {
  if (T == 0) throw InvalidConfig("T must be positive");
  if (!(beta_start > 0.0 && beta_end >= beta_start && beta_end < 1.0))
    throw InvalidConfig("betas must satisfy 0 < beta_start <= beta_end < 1");
  std::vector<double> ab(T + 1);
  ab[0] = 1.0;
  for (std::size_t t = 1; t <= T; ++t) {
    const double beta = T == 1 ? beta_start
                               : beta_start + (beta_end - beta_start) * static_cast<double>(t - 1) /
                                                  static_cast<double>(T - 1);
    ab[t] = ab[t - 1] * (1.0 - beta);
  }
  return NoiseSchedule(std::move(ab));
}

Tensor q_sample(const NoiseSchedule& schedule, const Tensor& u0, std::size_t t, const Tensor& eps) {
  check_same_shape(u0, eps, "q_sample");
  if (t > schedule.steps()) throw InvalidConfig("timestep out of range");
  const double a = schedule.alpha_bar(t);
  const double sa = std::sqrt(a), sb = std::sqrt(1.0 - a);
  Tensor out(u0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sa * u0[i] + sb * eps[i];
  return out;
}

Tensor guided_noise(const Tensor& eps_cond, const Tensor& eps_uncond, double gamma) {
  check_same_shape(eps_cond, eps_uncond, "guided_noise");
  Tensor out(eps_cond.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps_cond[i] + gamma * (eps_cond[i] - eps_uncond[i]);
  return out;
}

std::vector<std::size_t> sampling_timesteps(std::size_t T, std::size_t steps) {
  if (steps == 0 || steps > T) throw InvalidConfig("sampling steps must be in [1, T]");
  std::vector<std::size_t> ts(steps);
  for (std::size_t i = 1; i <= steps; ++i) ts[steps - i] = (i * T + steps / 2) / steps;
  return ts;
}

Tensor ddim_step(const NoiseSchedule& schedule, const Tensor& x_t, const Tensor& eps, std::size_t t, std::size_t s,
                 double eta, const Tensor& z) {
  check_same_shape(x_t, eps, "ddim_step");
  const double at = schedule.alpha_bar(t), as = schedule.alpha_bar(s);
  const double sigma = eta * std::sqrt((1.0 - as) / (1.0 - at)) * std::sqrt(1.0 - at / as);
  const double dir = std::sqrt(std::max(0.0, 1.0 - as - sigma * sigma));
  const double sat = std::sqrt(at), sbt = std::sqrt(1.0 - at), sas = std::sqrt(as);
  const bool noisy = sigma > 0.0;
  if (noisy) check_same_shape(x_t, z, "ddim_step noise");
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0 = (x_t[i] - sbt * eps[i]) / sat;
    out[i] = sas * x0 + dir * eps[i] + (noisy ? sigma * z[i] : 0.0);
  }
  return out;
}

Tensor ddpm_step(const NoiseSchedule& schedule, const Tensor& x_t, const Tensor& eps, std::size_t t, std::size_t s,
                 const Tensor& z) {
  check_same_shape(x_t, eps, "ddpm_step");
  const double at = schedule.alpha_bar(t), as = schedule.alpha_bar(s);
  // Posterior q(x_s | x_t, x0) of the respaced chain.
  const double beta = 1.0 - at / as;
  const double c0 = std::sqrt(as) * beta / (1.0 - at);
  const double ct = std::sqrt(1.0 - beta) * (1.0 - as) / (1.0 - at);
  const double sd = std::sqrt(beta * (1.0 - as) / (1.0 - at));
  const double sat = std::sqrt(at), sbt = std::sqrt(1.0 - at);
  const bool noisy = s > 0;
  if (noisy) check_same_shape(x_t, z, "ddpm_step noise");
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0 = (x_t[i] - sbt * eps[i]) / sat;
    out[i] = c0 * x0 + ct * x_t[i] + (noisy ? sd * z[i] : 0.0);
  }
  return out;
}

Tensor sample(const Denoiser& denoiser, const Tensor* cond, std::size_t n, std::size_t k,
              const NoiseSchedule& schedule, const GuidanceConfig& cfg, Rng& rng) {
  validate(cfg, schedule);
  Tensor x = rng.normal_tensor({n, k});
  x = run(denoiser, cond, std::move(x), schedule, cfg, rng, [](Tensor&, std::size_t) {});
  clamp_unit(x);
  return x;
}

Tensor edit(const Denoiser& denoiser, const Tensor* cond, const Tensor& u_ref, const Tensor& mask,
            const NoiseSchedule& schedule, const GuidanceConfig& cfg, Rng& rng) {
  validate(cfg, schedule);
  if (u_ref.rank() != 2) throw ShapeMismatch("edit: reference must be N x K");
  check_same_shape(u_ref, mask, "edit mask");
  for (double m : mask.data())
    if (m != 0.0 && m != 1.0) throw FormatError("edit mask must be binary");

  // Drawn before the sampling stream advances so an all-zero mask leaves the
  // main trajectory untouched.
  Rng ref_rng = rng.split(kEditStreamTag);
  Tensor x = rng.normal_tensor(u_ref.shape());
  auto inject = [&](Tensor& xt, std::size_t t) {
    const Tensor noise = ref_rng.normal_tensor(u_ref.shape());
    const Tensor ref_t = q_sample(schedule, u_ref, t, noise);
    for (std::size_t i = 0; i < xt.size(); ++i)
      if (mask[i] == 1.0) xt[i] = ref_t[i];
  };
  x = run(denoiser, cond, std::move(x), schedule, cfg, rng, inject);
  clamp_unit(x);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (mask[i] == 1.0) x[i] = u_ref[i];
  return x;
}

}  // namespace said::diffusion
