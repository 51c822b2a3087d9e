#include "said/numerics/optim.hpp"

#include <algorithm>
#include <cmath>

#include "said/error.hpp"

namespace said {

AdamW::AdamW(std::vector<ad::Var> params, double beta1, double beta2, double eps, double weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
  for (const ad::Var& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Var& p = params_[i];
    const Tensor g = p.grad();
    Tensor& w = p.mutable_value();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / c1, vhat = v[j] / c2;
      w[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[j]);
    }
    p.zero_grad();
  }
}

void ema_update(std::vector<ad::Var>& shadow, const std::vector<ad::Var>& source, double decay) {
  if (shadow.size() != source.size()) throw DimensionMismatch("ema: parameter lists differ");
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    Tensor& s = shadow[i].mutable_value();
    const Tensor& p = source[i].value();
    if (!s.same_shape(p)) throw DimensionMismatch("ema: parameter shapes differ");
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = decay * s[j] + (1.0 - decay) * p[j];
  }
}

double warmup_lr(double base_lr, std::size_t step, std::size_t total_steps, double warmup_fraction) {
  const double warmup = std::max(1.0, std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  return base_lr * std::min(1.0, static_cast<double>(step + 1) / warmup);
}

}  // namespace said
