#include "said/denoiser/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "said/error.hpp"

namespace said::denoiser {

namespace {

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

std::vector<ad::Var> leaves(Denoiser& model) {
  std::vector<ad::Var> out;
  for (auto& [name, p] : model.parameters()) out.push_back(p);
  return out;
}

struct LossParts {
  ad::Var total;
  double simple = 0.0;
  double velocity = 0.0;
};

LossParts loss_parts(const Denoiser& model, const diffusion::NoiseSchedule& schedule, const Tensor& u0,
                     const Tensor* cond, std::size_t t, const Tensor& eps, LossMode mode, bool use_velocity_loss) {
  const ad::Var u_t = ad::constant(diffusion::q_sample(schedule, u0, t, eps));
  ad::Var eps_hat;
  if (cond) {
    const ad::Var c = ad::constant(*cond);
    eps_hat = model.forward(u_t, &c, t);
  } else {
    eps_hat = model.forward(u_t, nullptr, t);
  }
  LossParts parts;
  parts.total = loss_simple(eps, eps_hat, mode);
  parts.simple = parts.total.value()[0];
  if (use_velocity_loss && u0.rows() >= 2) {
    const ad::Var vel = loss_velocity(eps, eps_hat);
    parts.velocity = vel.value()[0];
    parts.total = ad::add(parts.total, vel);
  }
  return parts;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch == 0) throw InvalidConfig("train: batch must be positive");
  if (!(lr > 0.0)) throw InvalidConfig("train: lr must be positive");
  if (weight_decay < 0.0) throw InvalidConfig("train: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw InvalidConfig("train: betas must be in [0, 1)");
  if (!is_probability(ema_decay)) throw InvalidConfig("train: ema_decay must be in [0, 1]");
  if (!is_probability(cond_drop_prob) || !is_probability(audio_shift_prob) || !is_probability(blendshape_swap_prob))
    throw InvalidConfig("train: probabilities must be in [0, 1]");
  if (!is_probability(warmup_fraction)) throw InvalidConfig("train: warmup_fraction must be in [0, 1]");
  if (window == 0) throw InvalidConfig("train: window must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch", c.batch},
       {"lr", c.lr},
       {"weight_decay", c.weight_decay},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"ema_decay", c.ema_decay},
       {"cond_drop_prob", c.cond_drop_prob},
       {"loss_mode", c.loss_mode == LossMode::L1 ? "L1" : "L2"},
       {"use_velocity_loss", c.use_velocity_loss},
       {"audio_shift_prob", c.audio_shift_prob},
       {"blendshape_swap_prob", c.blendshape_swap_prob},
       {"symmetric_pairs", c.symmetric_pairs},
       {"total_steps", c.total_steps},
       {"warmup_fraction", c.warmup_fraction},
       {"window", c.window}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.batch = j.value("batch", d.batch);
  c.lr = j.value("lr", d.lr);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.ema_decay = j.value("ema_decay", d.ema_decay);
  c.cond_drop_prob = j.value("cond_drop_prob", d.cond_drop_prob);
  const std::string mode = j.value("loss_mode", std::string("L1"));
  if (mode != "L1" && mode != "L2") throw InvalidConfig("train: loss_mode must be L1 or L2");
  c.loss_mode = mode == "L1" ? LossMode::L1 : LossMode::L2;
  c.use_velocity_loss = j.value("use_velocity_loss", d.use_velocity_loss);
  c.audio_shift_prob = j.value("audio_shift_prob", d.audio_shift_prob);
  c.blendshape_swap_prob = j.value("blendshape_swap_prob", d.blendshape_swap_prob);
  c.symmetric_pairs = j.value("symmetric_pairs", d.symmetric_pairs);
  c.total_steps = j.value("total_steps", d.total_steps);
  c.warmup_fraction = j.value("warmup_fraction", d.warmup_fraction);
  c.window = j.value("window", d.window);
}

std::vector<std::pair<std::string, std::string>> default_symmetric_pairs(const std::vector<std::string>& names) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const std::string& left : names) {
    const auto pos = left.rfind("Left");
    if (pos == std::string::npos) continue;
    std::string right = left;
    right.replace(pos, 4, "Right");
    if (std::find(names.begin(), names.end(), right) != names.end()) out.emplace_back(left, right);
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> resolve_pairs(
    const std::vector<std::pair<std::string, std::string>>& pairs, const std::vector<std::string>& names) {
  auto index_of = [&](const std::string& n) {
    const auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) throw InvalidConfig("symmetric pair names unknown channel " + n);
    return static_cast<std::size_t>(it - names.begin());
  };
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& [a, b] : pairs) out.emplace_back(index_of(a), index_of(b));
  return out;
}

Tensor shift_features(const Tensor& features, double delta) {
  if (features.rank() != 2) throw ShapeMismatch("shift_features: expected N x D");
  const std::size_t n = features.rows(), d = features.cols();
  Tensor out(features.shape());
  if (n == 0) return out;
  const double last = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = std::clamp(static_cast<double>(i) + delta, 0.0, last);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double w = pos - static_cast<double>(lo);
    for (std::size_t c = 0; c < d; ++c) out(i, c) = (1.0 - w) * features(lo, c) + w * features(hi, c);
  }
  return out;
}

Tensor swap_channels(const Tensor& u, std::span<const std::pair<std::size_t, std::size_t>> pairs) {
  Tensor out = u;
  for (const auto& [a, b] : pairs) {
    if (a >= u.cols() || b >= u.cols()) throw ShapeMismatch("swap_channels: pair index out of range");
    for (std::size_t i = 0; i < u.rows(); ++i) std::swap(out(i, a), out(i, b));
  }
  return out;
}

std::vector<TrainingExample> sample_windows(std::span<const TrainingExample> dataset, std::size_t batch,
                                            std::size_t window, Rng& rng) {
  if (dataset.empty()) throw EmptyInput("sample_windows: empty dataset");
  std::vector<TrainingExample> out;
  out.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const TrainingExample& ex = dataset[rng.below(dataset.size())];
    const std::size_t n = ex.u0.rows();
    const std::size_t len = std::min(window, n);
    const std::size_t start = n > len ? rng.below(n - len + 1) : 0;
    TrainingExample w{Tensor({len, ex.u0.cols()}), Tensor({len, ex.features.cols()})};
    for (std::size_t i = 0; i < len; ++i) {
      std::copy_n(ex.u0.row(start + i).begin(), ex.u0.cols(), w.u0.row(i).begin());
      std::copy_n(ex.features.row(start + i).begin(), ex.features.cols(), w.features.row(i).begin());
    }
    out.push_back(std::move(w));
  }
  return out;
}

ad::Var compute_loss(const Denoiser& model, const diffusion::NoiseSchedule& schedule, const Tensor& u0,
                     const Tensor* cond, std::size_t t, const Tensor& eps, LossMode mode, bool use_velocity_loss) {
  return loss_parts(model, schedule, u0, cond, t, eps, mode, use_velocity_loss).total;
}

Ema::Ema(const Denoiser& model, double decay) : shadow_(model.clone()), decay_(decay) {}

void Ema::update(const Denoiser& model) {
  std::vector<ad::Var> dst, src;
  for (const auto& [name, p] : shadow_.parameters()) dst.push_back(p);
  for (const auto& [name, p] : model.parameters()) src.push_back(p);
  ema_update(dst, src, decay_);
}

Trainer::Trainer(Denoiser& model, diffusion::NoiseSchedule schedule, TrainConfig cfg, std::uint64_t seed,
                 const std::vector<std::string>& channel_names)
    : model_(model),
      schedule_(std::move(schedule)),
      cfg_(std::move(cfg)),
      rng_(seed),
      opt_(leaves(model), cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay),
      ema_(model, cfg_.ema_decay) {
  cfg_.validate();
  if (!cfg_.symmetric_pairs.empty()) {
    if (channel_names.size() != model.config().channels)
      throw InvalidConfig("train: symmetric pairs need one name per channel");
    pairs_ = resolve_pairs(cfg_.symmetric_pairs, channel_names);
  }
}

double Trainer::lr_at(std::size_t step) const {
  return warmup_lr(cfg_.lr, step, cfg_.total_steps, cfg_.warmup_fraction);
}

StepStats Trainer::step(std::span<const TrainingExample> batch) {
  if (batch.empty()) throw EmptyInput("train step: empty batch");
  const std::size_t T = schedule_.steps();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  ad::Var total;
  double simple_sum = 0.0, vel_sum = 0.0;
  std::ostringstream draws;
  for (const TrainingExample& ex : batch) {
    if (ex.u0.rank() != 2 || ex.features.rank() != 2 || ex.u0.rows() != ex.features.rows())
      throw ShapeMismatch("train step: coefficients and features must have matching frame counts");
    // Every draw happens regardless of the probabilities so the stream
    // layout does not depend on the augmentation settings.
    const std::size_t t = 1 + rng_.below(T);
    const Tensor eps = rng_.normal_tensor(ex.u0.shape());
    const bool shift = rng_.bernoulli(cfg_.audio_shift_prob);
    const double delta = rng_.uniform(-1.0, 1.0);
    const bool swap = rng_.bernoulli(cfg_.blendshape_swap_prob);
    const bool drop = rng_.bernoulli(cfg_.cond_drop_prob);
    draws << " t=" << t;

    const Tensor u0 = swap && !pairs_.empty() ? swap_channels(ex.u0, pairs_) : ex.u0;
    const Tensor cond = shift ? shift_features(ex.features, delta) : ex.features;

    const LossParts parts = loss_parts(model_, schedule_, u0, drop ? nullptr : &cond, t, eps, cfg_.loss_mode,
                                       cfg_.use_velocity_loss);
    simple_sum += parts.simple;
    vel_sum += parts.velocity;
    const ad::Var loss = ad::scale(parts.total, inv_b);
    total = total ? ad::add(total, loss) : loss;
  }

  StepStats stats;
  stats.step = step_;
  stats.loss = total.value()[0];
  stats.loss_simple = simple_sum * inv_b;
  stats.loss_velocity = vel_sum * inv_b;
  stats.lr = lr_at(step_);
  if (!std::isfinite(stats.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << step_ << " (simple=" << stats.loss_simple
        << ", velocity=" << stats.loss_velocity << ", lr=" << stats.lr << ";" << draws.str() << ")";
    for (const auto& [name, p] : model_.parameters())
      if (!p.value().all_finite()) msg << "; non-finite parameter " << name;
    throw NaNLoss(msg.str());
  }
  ad::backward(total);
  opt_.step(stats.lr);
  ema_.update(model_);
  ++step_;
  return stats;
}

}  // namespace said::denoiser
