#include "said/metrics/vae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "said/error.hpp"
#include "said/numerics/btsr.hpp"
#include "said/numerics/optim.hpp"

namespace said::metrics {

namespace {

constexpr int kVaeFormat = 1;

Tensor scaled_normal(Rng& rng, Shape shape, double scale) {
  Tensor t = rng.normal_tensor(std::move(shape));
  t *= scale;
  return t;
}

/// Rows of w repeated over n frames, for elementwise channel weighting.
Tensor tile_rows(const Tensor& w, std::size_t n) {
  Tensor t({n, w.size()});
  for (std::size_t i = 0; i < n; ++i) std::copy(w.data().begin(), w.data().end(), t.row(i).begin());
  return t;
}

std::vector<ad::Var> vars_of(const std::vector<Vae::NamedParam>& params) {
  std::vector<ad::Var> out;
  out.reserve(params.size());
  for (const auto& [name, v] : params) out.push_back(v);
  return out;
}

}  // namespace

void VaeConfig::validate() const {
  if (channels == 0 || latent == 0 || hidden == 0) throw InvalidConfig("vae: channels, latent and hidden must be positive");
  if (window < 4 || window % 4 != 0) throw InvalidConfig("vae: window must be a positive multiple of 4");
  if (stride == 0) throw InvalidConfig("vae: stride must be positive");
  if (cycles == 0 || ramp_ratio <= 0.0 || ramp_ratio > 1.0) throw InvalidConfig("vae: invalid beta schedule");
  if (beta_max < 0.0) throw InvalidConfig("vae: beta_max must be nonnegative");
  if (!(lr > 0.0) || batch == 0) throw InvalidConfig("vae: lr and batch must be positive");
  if (ema_decay < 0.0 || ema_decay >= 1.0) throw InvalidConfig("vae: ema_decay must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const VaeConfig& c) {
  j = {{"channels", c.channels},   {"latent", c.latent},
       {"hidden", c.hidden},       {"window", c.window},
       {"stride", c.stride},       {"leaky_slope", c.leaky_slope},
       {"cycles", c.cycles},       {"ramp_ratio", c.ramp_ratio},
       {"beta_max", c.beta_max},   {"lr", c.lr},
       {"warmup_fraction", c.warmup_fraction}, {"weight_decay", c.weight_decay},
       {"beta1", c.beta1},         {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},   {"ema_decay", c.ema_decay},
       {"batch", c.batch},         {"steps", c.steps}};
}

void from_json(const nlohmann::json& j, VaeConfig& c) {
  VaeConfig d;
  c.channels = j.value("channels", d.channels);
  c.latent = j.value("latent", d.latent);
  c.hidden = j.value("hidden", d.hidden);
  c.window = j.value("window", d.window);
  c.stride = j.value("stride", d.stride);
  c.leaky_slope = j.value("leaky_slope", d.leaky_slope);
  c.cycles = j.value("cycles", d.cycles);
  c.ramp_ratio = j.value("ramp_ratio", d.ramp_ratio);
  c.beta_max = j.value("beta_max", d.beta_max);
  c.lr = j.value("lr", d.lr);
  c.warmup_fraction = j.value("warmup_fraction", d.warmup_fraction);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.ema_decay = j.value("ema_decay", d.ema_decay);
  c.batch = j.value("batch", d.batch);
  c.steps = j.value("steps", d.steps);
}

double cyclical_beta(std::size_t step, std::size_t total_steps, std::size_t cycles, double ramp_ratio,
                     double beta_max) {
  if (total_steps == 0 || cycles == 0) return beta_max;
  const double period = static_cast<double>(total_steps) / static_cast<double>(cycles);
  const double phase = std::fmod(static_cast<double>(step), period) / period;
  return beta_max * std::min(1.0, phase / ramp_ratio);
}

Tensor channel_weights(std::span<const Tensor> sequences) {
  if (sequences.empty()) throw EmptyInput("channel_weights: no sequences");
  const std::size_t k = sequences.front().cols();
  std::vector<double> sum(k, 0.0), sq(k, 0.0);
  double count = 0.0;
  for (const auto& s : sequences) {
    if (s.rank() != 2 || s.cols() != k) throw ShapeMismatch("channel_weights: sequences differ in channel count");
    for (std::size_t n = 0; n < s.rows(); ++n)
      for (std::size_t c = 0; c < k; ++c) sum[c] += s(n, c);
    count += static_cast<double>(s.rows());
  }
  if (count == 0.0) throw EmptyInput("channel_weights: no frames");
  for (std::size_t c = 0; c < k; ++c) sum[c] /= count;
  for (const auto& s : sequences)
    for (std::size_t n = 0; n < s.rows(); ++n)
      for (std::size_t c = 0; c < k; ++c) sq[c] += (s(n, c) - sum[c]) * (s(n, c) - sum[c]);
  Tensor w({k});
  for (std::size_t c = 0; c < k; ++c) {
    const double sigma = std::sqrt(sq[c] / count);
    w[c] = sigma < 1e-6 ? 0.0 : 1.0 / sigma;
  }
  return w;
}

double kl_standard_normal(const Tensor& mu, const Tensor& logvar) {
  if (!mu.same_shape(logvar)) throw ShapeMismatch("kl_standard_normal: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) s += mu[i] * mu[i] + std::exp(logvar[i]) - 1.0 - logvar[i];
  return 0.5 * s;
}

ad::Var kl_standard_normal(const ad::Var& mu, const ad::Var& logvar) {
  const ad::Var terms = ad::sub(ad::add(ad::square(mu), ad::exp(logvar)), ad::add_scalar(logvar, 1.0));
  return ad::scale(ad::sum(terms), 0.5);
}

ad::Var weighted_reconstruction(const Tensor& u, const ad::Var& u_hat, const Tensor& weights) {
  if (u.shape() != u_hat.shape() || u.rank() != 2 || weights.size() != u.cols())
    throw ShapeMismatch("weighted_reconstruction: shape mismatch");
  const Tensor w = tile_rows(weights, u.rows());
  return ad::sum(ad::square(ad::mul_const(ad::sub(ad::constant(u), u_hat), w)));
}

ad::Var weighted_velocity(const Tensor& u, const ad::Var& u_hat, const Tensor& weights) {
  if (u.shape() != u_hat.shape() || u.rank() != 2 || weights.size() != u.cols())
    throw ShapeMismatch("weighted_velocity: shape mismatch");
  if (u.rows() < 2) return ad::constant(Tensor::scalar(0.0));
  const Tensor w = tile_rows(weights, u.rows() - 1);
  const ad::Var gap = ad::sub(ad::time_diff(ad::constant(u)), ad::time_diff(u_hat));
  return ad::sum(ad::square(ad::mul_const(gap, w)));
}

Vae::Vae(const VaeConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t k = cfg_.channels, h = cfg_.hidden, l = cfg_.latent, flat = cfg_.window / 4 * h;
  auto make = [&](const std::string& name, Tensor init) { params_.emplace_back(name, ad::parameter(std::move(init))); };
  auto conv = [&](const std::string& name, std::size_t kernel, std::size_t in, std::size_t out) {
    make(name + ".w", scaled_normal(rng, {kernel, in, out}, 1.0 / std::sqrt(static_cast<double>(kernel * in))));
    make(name + ".b", Tensor({out}));
  };
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    make(name + ".w", scaled_normal(rng, {in, out}, 1.0 / std::sqrt(static_cast<double>(in))));
    make(name + ".b", Tensor({out}));
  };
  conv("enc.conv0", 3, k, h);
  conv("enc.down1", 4, h, h);
  conv("enc.down2", 4, h, h);
  dense("enc.mu", flat, l);
  dense("enc.logvar", flat, l);
  dense("dec.fc", l, flat);
  conv("dec.up1", 3, h, h);
  conv("dec.up2", 3, h, h);
  conv("dec.out", 3, h, k);
  // A small positive output bias keeps the final ReLU active at the start.
  for (auto& [name, v] : params_)
    if (name == "dec.out.b") v.mutable_value() = Tensor({k}, 0.1);
  weight_ = Tensor({k}, 1.0);
}

const ad::Var& Vae::p(const std::string& name) const {
  for (const auto& [n, v] : params_)
    if (n == name) return v;
  throw FormatError("vae: unknown parameter " + name);
}

void Vae::set_channel_weight(Tensor w) {
  if (w.size() != cfg_.channels) throw ShapeMismatch("vae: channel weight has the wrong length");
  weight_ = std::move(w).reshaped({cfg_.channels});
}

void Vae::check_window(const Tensor& u) const {
  if (u.rank() != 2 || u.rows() != cfg_.window || u.cols() != cfg_.channels)
    throw ShapeMismatch("vae: expected a " + std::to_string(cfg_.window) + " x " + std::to_string(cfg_.channels) +
                        " window, got " + shape_string(u.shape()));
}

std::pair<ad::Var, ad::Var> Vae::encode(const ad::Var& u) const {
  const double a = cfg_.leaky_slope;
  ad::Var x = ad::leaky_relu(ad::conv1d(u, p("enc.conv0.w"), p("enc.conv0.b"), 1, 1), a);
  x = ad::leaky_relu(ad::conv1d(x, p("enc.down1.w"), p("enc.down1.b"), 2, 1), a);
  x = ad::leaky_relu(ad::conv1d(x, p("enc.down2.w"), p("enc.down2.b"), 2, 1), a);
  x = ad::reshape(x, {1, x.value().size()});
  return {ad::linear(x, p("enc.mu.w"), p("enc.mu.b")), ad::linear(x, p("enc.logvar.w"), p("enc.logvar.b"))};
}

ad::Var Vae::decode(const ad::Var& z) const {
  const double a = cfg_.leaky_slope;
  ad::Var x = ad::leaky_relu(ad::linear(z, p("dec.fc.w"), p("dec.fc.b")), a);
  x = ad::reshape(x, {cfg_.window / 4, cfg_.hidden});
  x = ad::leaky_relu(ad::conv1d(ad::upsample_time(x, 2), p("dec.up1.w"), p("dec.up1.b"), 1, 1), a);
  x = ad::leaky_relu(ad::conv1d(ad::upsample_time(x, 2), p("dec.up2.w"), p("dec.up2.b"), 1, 1), a);
  x = ad::conv1d(x, p("dec.out.w"), p("dec.out.b"), 1, 1);
  return ad::tanh(ad::relu(x));
}

VaeOutput Vae::forward(const Tensor& u, const Tensor& eps) const {
  check_window(u);
  if (eps.size() != cfg_.latent) throw ShapeMismatch("vae: latent noise has the wrong size");
  auto [mu, logvar] = encode(ad::constant(u));
  const ad::Var z = ad::add(mu, ad::mul_const(ad::exp(ad::scale(logvar, 0.5)), eps.reshaped({1, cfg_.latent})));
  return {mu, logvar, decode(z)};
}

Tensor Vae::latent_mean(const Tensor& window) const {
  check_window(window);
  return encode(ad::constant(window)).first.value().reshaped({cfg_.latent});
}

Vae Vae::clone() const {
  Vae v;
  v.cfg_ = cfg_;
  v.weight_ = weight_;
  v.params_.reserve(params_.size());
  for (const auto& [name, p] : params_) v.params_.emplace_back(name, ad::parameter(p.value()));
  return v;
}

void Vae::load_values(const std::vector<std::pair<std::string, Tensor>>& values) {
  for (auto& [name, p] : params_) {
    const auto it = std::find_if(values.begin(), values.end(), [&](const auto& v) { return v.first == name; });
    if (it == values.end()) throw FormatError("vae: missing parameter " + name);
    if (it->second.shape() != p.shape())
      throw FormatError("vae: parameter " + name + " has shape " + shape_string(it->second.shape()) + ", expected " +
                        shape_string(p.shape()));
    p.mutable_value() = it->second;
  }
}

VaeLossParts vae_loss(const Vae& model, const Tensor& u, const Tensor& eps, double beta) {
  const VaeOutput out = model.forward(u, eps);
  const ad::Var rec = weighted_reconstruction(u, out.recon, model.channel_weight());
  const ad::Var vel = weighted_velocity(u, out.recon, model.channel_weight());
  const ad::Var kl = kl_standard_normal(out.mu, out.logvar);
  VaeLossParts parts;
  parts.reconstruction = rec.value().item();
  parts.velocity = vel.value().item();
  parts.kl = kl.value().item();
  parts.total = ad::add(ad::add(rec, vel), ad::scale(kl, beta));
  return parts;
}

Vae train_vae(std::span<const Tensor> sequences, const VaeConfig& cfg, Rng& rng,
              const std::function<void(const VaeStep&)>& on_step) {
  cfg.validate();
  std::vector<const Tensor*> usable;
  for (const auto& s : sequences) {
    if (s.rank() != 2 || s.cols() != cfg.channels)
      throw ShapeMismatch("train_vae: sequence shape " + shape_string(s.shape()) + " does not have " +
                          std::to_string(cfg.channels) + " channels");
    if (s.rows() >= cfg.window) usable.push_back(&s);
  }
  if (usable.empty()) throw TooShort("train_vae: no sequence covers one window of " + std::to_string(cfg.window));

  Rng init = rng.split(0);
  Vae model(cfg, init);
  model.set_channel_weight(channel_weights(sequences));
  Vae ema = model.clone();
  std::vector<ad::Var> params = vars_of(model.parameters());
  std::vector<ad::Var> shadow = vars_of(ema.parameters());
  AdamW opt(params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double beta = cyclical_beta(step, cfg.steps, cfg.cycles, cfg.ramp_ratio, cfg.beta_max);
    double loss = 0.0, rec = 0.0;
    const double inv = 1.0 / static_cast<double>(cfg.batch);
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const Tensor& seq = *usable[rng.below(usable.size())];
      const std::size_t start = rng.below(seq.rows() - cfg.window + 1);
      Tensor window({cfg.window, cfg.channels});
      for (std::size_t n = 0; n < cfg.window; ++n)
        std::copy(seq.row(start + n).begin(), seq.row(start + n).end(), window.row(n).begin());
      const Tensor eps = rng.normal_tensor({cfg.latent});
      const VaeLossParts parts = vae_loss(model, window, eps, beta);
      const double value = parts.total.value().item();
      if (!std::isfinite(value)) throw NaNLoss("train_vae: non-finite loss at step " + std::to_string(step));
      ad::backward(ad::scale(parts.total, inv));
      loss += value * inv;
      rec += parts.reconstruction * inv;
    }
    opt.step(warmup_lr(cfg.lr, step, cfg.steps, cfg.warmup_fraction));
    ema_update(shadow, params, cfg.ema_decay);
    if (on_step) on_step(VaeStep{step, loss, rec, beta});
  }
  return ema;
}

Tensor extract_features(const Vae& model, const Tensor& sequence) {
  const VaeConfig& cfg = model.config();
  if (sequence.rank() != 2 || sequence.cols() != cfg.channels)
    throw ShapeMismatch("extract_features: expected N x " + std::to_string(cfg.channels) + ", got " +
                        shape_string(sequence.shape()));
  if (sequence.rows() < cfg.window)
    throw TooShort("extract_features: " + std::to_string(sequence.rows()) + " frames, window is " +
                   std::to_string(cfg.window));
  Tensor mean({cfg.latent});
  std::size_t count = 0;
  Tensor window({cfg.window, cfg.channels});
  for (std::size_t start = 0; start + cfg.window <= sequence.rows(); start += cfg.stride) {
    for (std::size_t n = 0; n < cfg.window; ++n)
      std::copy(sequence.row(start + n).begin(), sequence.row(start + n).end(), window.row(n).begin());
    mean += model.latent_mean(window);
    ++count;
  }
  mean *= 1.0 / static_cast<double>(count);
  return mean;
}

Tensor extract_features(const Vae& model, std::span<const Tensor> sequences) {
  const std::size_t l = model.config().latent;
  Tensor out({sequences.size(), l});
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const Tensor f = extract_features(model, sequences[i]);
    std::copy(f.data().begin(), f.data().end(), out.row(i).begin());
  }
  return out;
}

void save_vae(const std::filesystem::path& dir, const Vae& model) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = kVaeFormat;
  manifest["kind"] = "vae";
  manifest["config"] = model.config();
  manifest["channel_weight"] = model.channel_weight().values();
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, p] : model.parameters()) {
    btsr::save(dir / (name + ".btsr"), p.value());
    names.push_back(name);
  }
  manifest["parameters"] = names;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

Vae load_vae(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("vae manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", 0) != kVaeFormat || manifest.value("kind", std::string()) != "vae")
    throw FormatError("vae manifest: unsupported format");
  const VaeConfig cfg = manifest.at("config").get<VaeConfig>();
  Rng rng(0);
  Vae model(cfg, rng);
  std::vector<std::pair<std::string, Tensor>> values;
  for (const auto& [name, p] : model.parameters()) values.emplace_back(name, btsr::load(dir / (name + ".btsr")));
  model.load_values(values);
  model.set_channel_weight(Tensor::vector(manifest.at("channel_weight").get<std::vector<double>>()));
  return model;
}

}  // namespace said::metrics
