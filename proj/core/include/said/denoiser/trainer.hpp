#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "said/denoiser/denoiser.hpp"
#include "said/diffusion/diffusion.hpp"
#include "said/numerics/optim.hpp"
#include "said/numerics/rng.hpp"

namespace said::denoiser {

struct TrainConfig {
  std::size_t batch = 8;
  double lr = 1e-5;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double ema_decay = 0.9999;
  double cond_drop_prob = 0.1;
  LossMode loss_mode = LossMode::L1;
  bool use_velocity_loss = true;
  double audio_shift_prob = 0.5;
  double blendshape_swap_prob = 0.5;
  /// Channel names swapped together by the symmetry augmentation.
  std::vector<std::pair<std::string, std::string>> symmetric_pairs;
  std::size_t total_steps = 10000;
  double warmup_fraction = 0.05;
  std::size_t window = 120;

  /// Throws InvalidConfig.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Every (xLeft, xRight) pair present in `names`.
std::vector<std::pair<std::string, std::string>> default_symmetric_pairs(const std::vector<std::string>& names);

/// Name pairs to column pairs. Throws InvalidConfig for unknown names.
std::vector<std::pair<std::size_t, std::size_t>> resolve_pairs(
    const std::vector<std::pair<std::string, std::string>>& pairs, const std::vector<std::string>& names);

/// One aligned training window: coefficients N x K and features N x D.
struct TrainingExample {
  Tensor u0;
  Tensor features;
};

/// Features resampled at fractional frame offset `delta` (clamped at the
/// ends): out[n] = f(n + delta).
Tensor shift_features(const Tensor& features, double delta);
/// Swaps each column pair.
Tensor swap_channels(const Tensor& u, std::span<const std::pair<std::size_t, std::size_t>> pairs);

/// Random windows of at most `window` frames, one per batch slot.
std::vector<TrainingExample> sample_windows(std::span<const TrainingExample> dataset, std::size_t batch,
                                            std::size_t window, Rng& rng);

/// L_simple + L_vel for one example at timestep t with fixed noise. A null
/// `cond` uses the null embedding.
ad::Var compute_loss(const Denoiser& model, const diffusion::NoiseSchedule& schedule, const Tensor& u0,
                     const Tensor* cond, std::size_t t, const Tensor& eps, LossMode mode, bool use_velocity_loss);

/// Exponential moving average of parameters: shadow <- d shadow + (1 - d) p.
class Ema {
 public:
  Ema(const Denoiser& model, double decay);
  void update(const Denoiser& model);
  const Denoiser& model() const noexcept { return shadow_; }
  double decay() const noexcept { return decay_; }

 private:
  Denoiser shadow_;
  double decay_;
};

struct StepStats {
  std::size_t step = 0;
  double loss = 0.0;
  double loss_simple = 0.0;
  double loss_velocity = 0.0;
  double lr = 0.0;
};

/// Owns the optimizer and EMA state of one training run. Deterministic for a
/// given seed and batch sequence.
class Trainer {
 public:
  Trainer(Denoiser& model, diffusion::NoiseSchedule schedule, TrainConfig cfg, std::uint64_t seed,
          const std::vector<std::string>& channel_names = {});

  /// Augments each example, computes the mean batch loss, updates the
  /// parameters and the EMA shadow. Throws NaNLoss.
  StepStats step(std::span<const TrainingExample> batch);

  double lr_at(std::size_t step) const;
  std::size_t steps_done() const noexcept { return step_; }
  const Denoiser& ema_model() const noexcept { return ema_.model(); }
  const TrainConfig& config() const noexcept { return cfg_; }
  const diffusion::NoiseSchedule& schedule() const noexcept { return schedule_; }
  Rng& rng() noexcept { return rng_; }

 private:
  Denoiser& model_;
  diffusion::NoiseSchedule schedule_;
  TrainConfig cfg_;
  Rng rng_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  AdamW opt_;
  Ema ema_;
  std::size_t step_ = 0;
};

}  // namespace said::denoiser
