#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "said/numerics/autodiff.hpp"
#include "said/numerics/rng.hpp"
#include "said/numerics/tensor.hpp"

namespace said::metrics {

struct VaeConfig {
  std::size_t channels = 32;  // K
  std::size_t latent = 16;
  std::size_t hidden = 32;
  std::size_t window = 120;  // must be divisible by 4
  std::size_t stride = 30;
  double leaky_slope = 0.2;
  // Cyclical beta annealing.
  std::size_t cycles = 4;
  double ramp_ratio = 0.5;
  double beta_max = 1.0;
  // Optimizer.
  double lr = 1e-4;
  double warmup_fraction = 0.05;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double ema_decay = 0.99;
  std::size_t batch = 8;
  std::size_t steps = 10000;

  /// Throws InvalidConfig.
  void validate() const;
};

void to_json(nlohmann::json& j, const VaeConfig& c);
void from_json(const nlohmann::json& j, VaeConfig& c);

/// beta at `step`: each of `cycles` equal periods ramps linearly from 0 to
/// beta_max over its first `ramp_ratio` fraction, then holds.
double cyclical_beta(std::size_t step, std::size_t total_steps, std::size_t cycles, double ramp_ratio,
                     double beta_max);

/// Per-channel 1/sigma over all frames; channels with sigma < 1e-6 get 0.
Tensor channel_weights(std::span<const Tensor> sequences);

/// KL(N(mu, diag exp(logvar)) || N(0, I)) summed over latent entries.
double kl_standard_normal(const Tensor& mu, const Tensor& logvar);
ad::Var kl_standard_normal(const ad::Var& mu, const ad::Var& logvar);

/// sum_n,k (w_k (u - u_hat))^2.
ad::Var weighted_reconstruction(const Tensor& u, const ad::Var& u_hat, const Tensor& weights);
/// sum_n,k (w_k ((u[n+1] - u[n]) - (u_hat[n+1] - u_hat[n])))^2; 0 for one frame.
ad::Var weighted_velocity(const Tensor& u, const ad::Var& u_hat, const Tensor& weights);

struct VaeOutput {
  ad::Var mu;      // 1 x latent
  ad::Var logvar;  // 1 x latent
  ad::Var recon;   // window x K
};

/// Convolutional sequence VAE over fixed-length windows.
///
/// Encoder: conv(k3) then two stride-2 convs (k4), flatten, linear heads for
/// mu and log-variance. Decoder mirrors it with nearest upsampling and ends
/// in ReLU then Tanh.
class Vae {
 public:
  using NamedParam = std::pair<std::string, ad::Var>;

  Vae(const VaeConfig& cfg, Rng& rng);

  const VaeConfig& config() const noexcept { return cfg_; }
  const std::vector<NamedParam>& parameters() const noexcept { return params_; }
  std::vector<NamedParam>& parameters() noexcept { return params_; }
  /// 1/sigma_u per channel used by the loss; all ones until set.
  const Tensor& channel_weight() const noexcept { return weight_; }
  void set_channel_weight(Tensor w);

  /// u: window x K. Returns (mu, logvar).
  std::pair<ad::Var, ad::Var> encode(const ad::Var& u) const;
  ad::Var decode(const ad::Var& z) const;
  /// Reparameterized pass with latent noise `eps` (1 x latent).
  VaeOutput forward(const Tensor& u, const Tensor& eps) const;
  /// Latent mean of one window.
  Tensor latent_mean(const Tensor& window) const;

  Vae clone() const;
  void load_values(const std::vector<std::pair<std::string, Tensor>>& values);

 private:
  Vae() = default;
  const ad::Var& p(const std::string& name) const;
  void check_window(const Tensor& u) const;

  VaeConfig cfg_;
  std::vector<NamedParam> params_;
  Tensor weight_;
};

struct VaeLossParts {
  ad::Var total;
  double reconstruction = 0.0;
  double velocity = 0.0;
  double kl = 0.0;
};

/// L_reconst + L_vel + beta KL for one window and latent noise.
VaeLossParts vae_loss(const Vae& model, const Tensor& u, const Tensor& eps, double beta);

struct VaeStep {
  std::size_t step = 0;
  double loss = 0.0;
  double reconstruction = 0.0;
  double beta = 0.0;
};

/// Trains on random windows of the sequences (each N_i x K with N_i >= window)
/// and returns the EMA weights. channel weights come from the data. Throws
/// TooShort when no sequence fits one window, NaNLoss on divergence.
Vae train_vae(std::span<const Tensor> sequences, const VaeConfig& cfg, Rng& rng,
              const std::function<void(const VaeStep&)>& on_step = {});

/// Latent means of the windows at stride `cfg.stride`, averaged. Throws
/// TooShort for sequences shorter than one window.
Tensor extract_features(const Vae& model, const Tensor& sequence);
/// One feature row per sequence: M x latent.
Tensor extract_features(const Vae& model, std::span<const Tensor> sequences);

void save_vae(const std::filesystem::path& dir, const Vae& model);
Vae load_vae(const std::filesystem::path& dir);

}  // namespace said::metrics
