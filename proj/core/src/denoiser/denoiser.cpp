#include "said/denoiser/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "said/error.hpp"
#include "said/log.hpp"
#include "said/numerics/btsr.hpp"

namespace said::denoiser {

namespace {

constexpr int kCheckpointFormat = 1;

Tensor scaled_normal(Rng& rng, Shape shape, double scale) {
  Tensor t = rng.normal_tensor(std::move(shape));
  t *= scale;
  return t;
}

}  // namespace

void DenoiserConfig::validate() const {
  if (channels == 0 || cond_dim == 0) throw InvalidConfig("denoiser: channels and cond_dim must be positive");
  if (hidden == 0 || heads == 0 || hidden % heads != 0) throw InvalidConfig("denoiser: hidden must be divisible by heads");
  if (hidden % 2 != 0) throw InvalidConfig("denoiser: hidden must be even for the timestep embedding");
  if (kernel == 0 || kernel % 2 == 0) throw InvalidConfig("denoiser: kernel must be odd");
  if (norm_groups == 0 || hidden % norm_groups != 0 || hidden / norm_groups < 2)
    throw InvalidConfig("denoiser: norm_groups must divide hidden with at least two channels per group");
  if (ff_mult == 0) throw InvalidConfig("denoiser: ff_mult must be positive");
}

void to_json(nlohmann::json& j, const DenoiserConfig& c) {
  j = {{"channels", c.channels},         {"hidden", c.hidden},
       {"heads", c.heads},               {"cond_dim", c.cond_dim},
       {"kernel", c.kernel},             {"norm_groups", c.norm_groups},
       {"ff_mult", c.ff_mult},           {"self_attention", c.self_attention},
       {"alignment_bias", c.alignment_bias}, {"zero_init_output", c.zero_init_output}};
}

void from_json(const nlohmann::json& j, DenoiserConfig& c) {
  DenoiserConfig d;
  c.channels = j.value("channels", d.channels);
  c.hidden = j.value("hidden", d.hidden);
  c.heads = j.value("heads", d.heads);
  c.cond_dim = j.value("cond_dim", d.cond_dim);
  c.kernel = j.value("kernel", d.kernel);
  c.norm_groups = j.value("norm_groups", d.norm_groups);
  c.ff_mult = j.value("ff_mult", d.ff_mult);
  c.self_attention = j.value("self_attention", d.self_attention);
  c.alignment_bias = j.value("alignment_bias", d.alignment_bias);
  c.zero_init_output = j.value("zero_init_output", d.zero_init_output);
}

Tensor sinusoidal_embedding(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw InvalidConfig("sinusoidal_embedding: dim must be even and positive");
  Tensor e({dim});
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double w = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    e[2 * i] = std::sin(t * w);
    e[2 * i + 1] = std::cos(t * w);
  }
  return e;
}

Tensor alignment_bias(std::size_t n) {
  Tensor b({n, n}, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i == 0 ? 0 : i - 1; j <= std::min(n - 1, i + 1); ++j) b(i, j) = 0.0;
  return b;
}

Tensor biased_cross_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias, Tensor* weights) {
  Tensor w;
  Tensor out = ad::attention_forward(q, k, v, bias, 1, weights ? &w : nullptr);
  if (weights) *weights = w.reshaped({q.rows(), k.rows()});
  return out;
}

ad::Var Denoiser::make(const std::string& name, Tensor init) {
  params_.emplace_back(name, ad::parameter(std::move(init)));
  return params_.back().second;
}

Denoiser::Denoiser(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t h = cfg_.hidden, k = cfg_.kernel, ff = cfg_.ff_mult * h;
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    make(name + ".w", scaled_normal(rng, {in, out}, 1.0 / std::sqrt(static_cast<double>(in))));
    make(name + ".b", Tensor({out}));
  };
  auto proj = [&](const std::string& name, std::size_t in, std::size_t out) {
    make(name, scaled_normal(rng, {in, out}, 1.0 / std::sqrt(static_cast<double>(in))));
  };
  auto conv = [&](const std::string& name, std::size_t in, std::size_t out) {
    make(name + ".w", scaled_normal(rng, {k, in, out}, 1.0 / std::sqrt(static_cast<double>(k * in))));
    make(name + ".b", Tensor({out}));
  };
  auto norm = [&](const std::string& name, std::size_t c) {
    make(name + ".g", Tensor({c}, 1.0));
    make(name + ".b", Tensor({c}));
  };
  auto resblock = [&](const std::string& p, std::size_t in) {
    norm(p + ".norm1", in);
    conv(p + ".conv1", in, h);
    dense(p + ".temb", h, h);
    norm(p + ".norm2", h);
    conv(p + ".conv2", h, h);
    if (in != h) dense(p + ".skip", in, h);
  };
  auto transformer = [&](const std::string& p) {
    if (cfg_.self_attention) {
      norm(p + ".self.norm", h);
      proj(p + ".self.q", h, h);
      proj(p + ".self.k", h, h);
      proj(p + ".self.v", h, h);
      dense(p + ".self.out", h, h);
    }
    norm(p + ".cross.norm", h);
    proj(p + ".cross.q", h, h);
    proj(p + ".cross.k", cfg_.cond_dim, h);
    proj(p + ".cross.v", cfg_.cond_dim, h);
    dense(p + ".cross.out", h, h);
    norm(p + ".ff.norm", h);
    dense(p + ".ff.in", h, ff);
    dense(p + ".ff.out", ff, h);
  };

  dense("time.fc1", h, h);
  dense("time.fc2", h, h);
  make("null_embedding", scaled_normal(rng, {cfg_.cond_dim}, 1.0));
  conv("conv_in", cfg_.channels, h);
  resblock("enc.res", h);
  transformer("enc.attn");
  resblock("mid.res", h);
  transformer("mid.attn");
  resblock("dec.res", 2 * h);
  transformer("dec.attn");
  norm("out.norm", h);
  if (cfg_.zero_init_output) {
    make("out.conv.w", Tensor({k, h, cfg_.channels}));
    make("out.conv.b", Tensor({cfg_.channels}));
  } else {
    conv("out.conv", h, cfg_.channels);
  }
}

std::size_t Denoiser::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value().size();
  return n;
}

const ad::Var& Denoiser::param(const std::string& name) const {
  for (const auto& [n, p] : params_)
    if (n == name) return p;
  throw Error("denoiser: no parameter named " + name);
}

ad::Var Denoiser::forward(const ad::Var& u_t, const ad::Var* cond, std::size_t t) const {
  const std::size_t h = cfg_.hidden;
  if (u_t.value().rank() != 2 || u_t.value().cols() != cfg_.channels)
    throw ShapeMismatch("denoiser: input must be N x " + std::to_string(cfg_.channels));
  const std::size_t n = u_t.value().rows();
  if (n == 0) throw ShapeMismatch("denoiser: empty sequence");
  if (cond && (cond->value().rank() != 2 || cond->value().rows() != n || cond->value().cols() != cfg_.cond_dim))
    throw ShapeMismatch("denoiser: condition must be " + std::to_string(n) + " x " + std::to_string(cfg_.cond_dim));

  const std::size_t pad = (cfg_.kernel - 1) / 2;
  auto P = [this](const std::string& name) -> const ad::Var& { return param(name); };
  auto dense = [&](const ad::Var& x, const std::string& name) { return ad::linear(x, P(name + ".w"), P(name + ".b")); };
  auto conv = [&](const ad::Var& x, const std::string& name) {
    return ad::conv1d(x, P(name + ".w"), P(name + ".b"), 1, pad);
  };
  auto norm = [&](const ad::Var& x, const std::string& name, std::size_t groups) {
    return ad::group_norm(x, groups, P(name + ".g"), P(name + ".b"));
  };

  const ad::Var c = cond ? *cond : ad::broadcast_rows(P("null_embedding"), n);
  const ad::Var temb = dense(ad::silu(dense(ad::constant(sinusoidal_embedding(static_cast<double>(t), h).reshaped({1, h})),
                                            "time.fc1")),
                             "time.fc2");
  const ad::Var temb_act = ad::silu(temb);
  const Tensor cross_bias = cfg_.alignment_bias ? alignment_bias(n) : Tensor({n, n});
  const Tensor self_bias({n, n});

  auto resblock = [&](const ad::Var& x, const std::string& p) {
    const std::size_t in = x.value().cols();
    ad::Var y = conv(ad::silu(norm(x, p + ".norm1", cfg_.norm_groups)), p + ".conv1");
    y = ad::add_row(y, ad::reshape(dense(temb_act, p + ".temb"), {h}));
    y = conv(ad::silu(norm(y, p + ".norm2", cfg_.norm_groups)), p + ".conv2");
    const ad::Var skip = in == h ? x : dense(x, p + ".skip");
    return ad::add(skip, y);
  };
  auto transformer = [&](ad::Var x, const std::string& p) {
    if (cfg_.self_attention) {
      const ad::Var z = norm(x, p + ".self.norm", 1);
      const ad::Var a = ad::attention(ad::matmul(z, P(p + ".self.q")), ad::matmul(z, P(p + ".self.k")),
                                      ad::matmul(z, P(p + ".self.v")), self_bias, cfg_.heads);
      x = ad::add(x, dense(a, p + ".self.out"));
    }
    const ad::Var z = norm(x, p + ".cross.norm", 1);
    const ad::Var a = ad::attention(ad::matmul(z, P(p + ".cross.q")), ad::matmul(c, P(p + ".cross.k")),
                                    ad::matmul(c, P(p + ".cross.v")), cross_bias, cfg_.heads);
    x = ad::add(x, dense(a, p + ".cross.out"));
    const ad::Var f = dense(ad::silu(dense(norm(x, p + ".ff.norm", 1), p + ".ff.in")), p + ".ff.out");
    return ad::add(x, f);
  };

  const ad::Var x0 = conv(u_t, "conv_in");
  const ad::Var enc = transformer(resblock(x0, "enc.res"), "enc.attn");
  const ad::Var mid = transformer(resblock(enc, "mid.res"), "mid.attn");
  const ad::Var dec = transformer(resblock(ad::concat_cols(mid, enc), "dec.res"), "dec.attn");
  return conv(ad::silu(norm(dec, "out.norm", cfg_.norm_groups)), "out.conv");
}

Tensor Denoiser::predict(const Tensor& u_t, const Tensor* cond, std::size_t t) const {
  const ad::Var x = ad::constant(u_t);
  if (cond) {
    const ad::Var c = ad::constant(*cond);
    return forward(x, &c, t).value();
  }
  return forward(x, nullptr, t).value();
}

diffusion::Denoiser Denoiser::as_function() const {
  return [this](const Tensor& u_t, const Tensor* cond, std::size_t t) { return predict(u_t, cond, t); };
}

Denoiser Denoiser::clone() const {
  Denoiser d;
  d.cfg_ = cfg_;
  d.params_.reserve(params_.size());
  for (const auto& [name, p] : params_) d.params_.emplace_back(name, ad::parameter(p.value()));
  return d;
}

void Denoiser::load_values(const std::vector<std::pair<std::string, Tensor>>& values) {
  for (auto& [name, p] : params_) {
    const auto it = std::find_if(values.begin(), values.end(), [&](const auto& v) { return v.first == name; });
    if (it == values.end()) throw FormatError("denoiser: missing parameter " + name);
    if (it->second.shape() != p.shape())
      throw FormatError("denoiser: parameter " + name + " has shape " + shape_string(it->second.shape()) +
                        ", expected " + shape_string(p.shape()));
    p.mutable_value() = it->second;
  }
}

std::vector<std::pair<std::string, Tensor>> Denoiser::values() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.emplace_back(name, p.value());
  return out;
}

double loss_simple(const Tensor& eps, const Tensor& eps_hat, LossMode mode) {
  if (!eps.same_shape(eps_hat)) throw ShapeMismatch("loss_simple: shape mismatch");
  if (eps.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double d = eps[i] - eps_hat[i];
    s += mode == LossMode::L1 ? std::abs(d) : d * d;
  }
  return s / static_cast<double>(eps.size());
}

ad::Var loss_simple(const Tensor& eps, const ad::Var& eps_hat, LossMode mode) {
  if (!eps.same_shape(eps_hat.value())) throw ShapeMismatch("loss_simple: shape mismatch");
  const ad::Var diff = ad::sub(eps_hat, ad::constant(eps));
  return ad::mean(mode == LossMode::L1 ? ad::abs(diff) : ad::square(diff));
}

double loss_velocity(const Tensor& eps, const Tensor& eps_hat) {
  if (!eps.same_shape(eps_hat) || eps.rank() != 2) throw ShapeMismatch("loss_velocity: shape mismatch");
  const std::size_t n = eps.rows(), k = eps.cols();
  if (n < 2) {
    log::warn("loss_velocity: single-frame sequence, velocity loss is 0");
    return 0.0;
  }
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i)
    for (std::size_t j = 0; j < k; ++j)
      s += std::abs((eps(i + 1, j) - eps(i, j)) - (eps_hat(i + 1, j) - eps_hat(i, j)));
  return s / static_cast<double>((n - 1) * k);
}

ad::Var loss_velocity(const Tensor& eps, const ad::Var& eps_hat) {
  if (!eps.same_shape(eps_hat.value()) || eps.rank() != 2) throw ShapeMismatch("loss_velocity: shape mismatch");
  if (eps.rows() < 2) {
    log::warn("loss_velocity: single-frame sequence, velocity loss is 0");
    return ad::scale(ad::sum(eps_hat), 0.0);
  }
  return ad::mean(ad::abs(ad::time_diff(ad::sub(eps_hat, ad::constant(eps)))));
}

double velocity_identity_check(const Tensor& u0, const Tensor& eps, const Tensor& eps_hat, double alpha_bar) {
  if (!u0.same_shape(eps) || !u0.same_shape(eps_hat) || u0.rank() != 2)
    throw ShapeMismatch("velocity_identity_check: shape mismatch");
  if (!(alpha_bar > 0.0 && alpha_bar < 1.0)) throw InvalidConfig("velocity_identity_check: alpha_bar must be in (0, 1)");
  const double sa = std::sqrt(alpha_bar), sb = std::sqrt(1.0 - alpha_bar);
  const double ratio = std::sqrt((1.0 - alpha_bar) / alpha_bar);
  const std::size_t n = u0.rows(), k = u0.cols();
  Tensor u_hat(u0.shape());
  for (std::size_t i = 0; i < u0.size(); ++i) {
    const double ut = sa * u0[i] + sb * eps[i];
    u_hat[i] = (ut - sb * eps_hat[i]) / sa;
  }
  double worst = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double sample_gap = (u0(i + 1, j) - u0(i, j)) - (u_hat(i + 1, j) - u_hat(i, j));
      const double noise_gap = (eps_hat(i + 1, j) - eps_hat(i, j)) - (eps(i + 1, j) - eps(i, j));
      worst = std::max(worst, std::abs(sample_gap - ratio * noise_gap));
    }
  }
  return worst;
}

void save_checkpoint(const std::filesystem::path& dir, const Denoiser& model, std::size_t step, bool ema,
                     const nlohmann::json& extra) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = extra.is_object() ? extra : nlohmann::json::object();
  manifest["format"] = kCheckpointFormat;
  manifest["config"] = model.config();
  manifest["step"] = step;
  manifest["ema"] = ema;
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

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", 0) != kCheckpointFormat) throw FormatError("checkpoint manifest: unsupported format");
  const DenoiserConfig cfg = manifest.at("config").get<DenoiserConfig>();
  Rng rng(0);
  Denoiser model(cfg, rng);
  std::vector<std::pair<std::string, Tensor>> values;
  for (const auto& [name, p] : model.parameters()) values.emplace_back(name, btsr::load(dir / (name + ".btsr")));
  model.load_values(values);
  return Checkpoint{std::move(model), manifest.value("step", std::size_t{0}), manifest.value("ema", false), manifest};
}

}  // namespace said::denoiser
