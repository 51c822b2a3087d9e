#pragma once

#include <cstddef>
#include <vector>

#include "said/numerics/autodiff.hpp"

namespace said {

/// Adam with decoupled weight decay over a fixed parameter list.
class AdamW {
 public:
  AdamW(std::vector<ad::Var> params, double beta1, double beta2, double eps, double weight_decay);
  /// Applies one update from the accumulated gradients, then clears them.
  void step(double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  std::vector<ad::Var> params_;
  std::vector<Tensor> m_, v_;
  double beta1_, beta2_, eps_, wd_;
  std::size_t t_ = 0;
};

/// shadow <- decay * shadow + (1 - decay) * source, parameter by parameter.
/// Throws DimensionMismatch when the lists differ.
void ema_update(std::vector<ad::Var>& shadow, const std::vector<ad::Var>& source, double decay);

/// Linear warmup over ceil(warmup_fraction * total_steps) steps, then constant.
double warmup_lr(double base_lr, std::size_t step, std::size_t total_steps, double warmup_fraction);

}  // namespace said
