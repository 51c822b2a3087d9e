#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "said/diffusion/diffusion.hpp"
#include "said/numerics/autodiff.hpp"
#include "said/numerics/rng.hpp"
#include "said/numerics/tensor.hpp"

namespace said::denoiser {

/// Width and switches of the conditional 1D UNet. The block layout is fixed:
/// one encoder, one middle and one decoder stage, each a residual block
/// followed by a transformer block, with no temporal resampling.
struct DenoiserConfig {
  std::size_t channels = 32;  // K
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t cond_dim = 40;  // D
  std::size_t kernel = 3;
  std::size_t norm_groups = 1;
  std::size_t ff_mult = 2;
  bool self_attention = true;
  bool alignment_bias = true;
  bool zero_init_output = true;

  std::size_t head_dim() const { return hidden / heads; }
  /// Throws InvalidConfig.
  void validate() const;
};

void to_json(nlohmann::json& j, const DenoiserConfig& c);
void from_json(const nlohmann::json& j, DenoiserConfig& c);

/// Interleaved sin/cos: e[2i] = sin(t w_i), e[2i+1] = cos(t w_i) with
/// w_i = 10000^(-2i/dim). `dim` must be even.
Tensor sinusoidal_embedding(double t, std::size_t dim);

/// N x N: 0 where |i - j| <= 1, -inf elsewhere.
Tensor alignment_bias(std::size_t n);

/// Single-head softmax(q k^T / sqrt(d) + bias) v. Entries at -inf get exactly
/// zero weight; `weights` receives the N x M matrix when given. Throws
/// AllMaskedRow.
Tensor biased_cross_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias,
                              Tensor* weights = nullptr);

/// Noise-prediction network eps(u_t, cond, t).
///
/// Parameters are autodiff leaves so the trainer updates them in place; a
/// null condition is replaced by the learned null embedding broadcast to N
/// rows.
class Denoiser {
 public:
  using NamedParam = std::pair<std::string, ad::Var>;

  Denoiser(const DenoiserConfig& cfg, Rng& rng);

  const DenoiserConfig& config() const noexcept { return cfg_; }
  const std::vector<NamedParam>& parameters() const noexcept { return params_; }
  std::vector<NamedParam>& parameters() noexcept { return params_; }
  std::size_t parameter_count() const;
  const ad::Var& param(const std::string& name) const;

  /// Differentiable forward pass. u_t: N x K, cond: N x D or null.
  /// Throws ShapeMismatch.
  ad::Var forward(const ad::Var& u_t, const ad::Var* cond, std::size_t t) const;
  Tensor predict(const Tensor& u_t, const Tensor* cond, std::size_t t) const;

  /// Callable for the samplers; the denoiser must outlive it.
  diffusion::Denoiser as_function() const;

  /// Deep copy with independent parameter storage.
  Denoiser clone() const;
  /// Copies values by name. Throws FormatError on a missing name or shape.
  void load_values(const std::vector<std::pair<std::string, Tensor>>& values);
  std::vector<std::pair<std::string, Tensor>> values() const;

 private:
  Denoiser() = default;
  ad::Var make(const std::string& name, Tensor init);

  DenoiserConfig cfg_;
  std::vector<NamedParam> params_;
};

enum class LossMode { L1, L2 };

/// Mean |eps - eps_hat| (L1) or mean squared error (L2).
double loss_simple(const Tensor& eps, const Tensor& eps_hat, LossMode mode);
ad::Var loss_simple(const Tensor& eps, const ad::Var& eps_hat, LossMode mode);

/// Mean over frames and channels of |(eps[n+1] - eps[n]) - (eps_hat[n+1] - eps_hat[n])|.
/// Returns 0 for a single frame and logs a warning.
double loss_velocity(const Tensor& eps, const Tensor& eps_hat);
ad::Var loss_velocity(const Tensor& eps, const ad::Var& eps_hat);

/// Compares the sample-space velocity gap of the reconstruction
/// u_hat = (u_t - sqrt(1 - ab) eps_hat) / sqrt(ab) against
/// sqrt((1 - ab) / ab) times the noise-space velocity gap. Returns the
/// largest absolute discrepancy.
double velocity_identity_check(const Tensor& u0, const Tensor& eps, const Tensor& eps_hat, double alpha_bar);

/// Checkpoint directory: one BTSR file per parameter plus manifest.json with
/// config, step, EMA flag and any extra fields.
void save_checkpoint(const std::filesystem::path& dir, const Denoiser& model, std::size_t step, bool ema,
                     const nlohmann::json& extra = {});
struct Checkpoint {
  Denoiser model;
  std::size_t step = 0;
  bool ema = false;
  nlohmann::json manifest;
};
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace said::denoiser
