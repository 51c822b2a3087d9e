#include "said/audio/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <mutex>
#include <numbers>

#include "said/error.hpp"
#include "said/numerics/btsr.hpp"

namespace said::audio {

namespace {

std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// FFTW planning is not thread-safe; execution with the new-array interface is.
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

Waveform parse_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) throw CorruptHeader("file shorter than a RIFF header");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw CorruptHeader("missing RIFF/WAVE magic");
  }
  std::optional<std::uint16_t> format;
  std::uint16_t channels = 0, bits = 0, block_align = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* hdr = bytes.data() + pos;
    const std::uint32_t size = get_u32(hdr + 4);
    if (size > bytes.size() - pos - 8) {
      throw CorruptHeader("chunk '" + std::string(reinterpret_cast<const char*>(hdr), 4) + "' runs past end of file");
    }
    const std::uint8_t* body = hdr + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16) throw CorruptHeader("fmt chunk too short");
      format = get_u16(body);
      channels = get_u16(body + 2);
      rate = get_u32(body + 4);
      block_align = get_u16(body + 12);
      bits = get_u16(body + 14);
      if (*format == kFormatExtensible) {
        if (size < 40) throw CorruptHeader("extensible fmt chunk too short");
        format = get_u16(body + 24);  // first two bytes of the sub-format GUID
      }
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = body;
      data_size = size;
    }
    pos += 8 + size + (size & 1u);
  }
  if (!format) throw CorruptHeader("missing fmt chunk");
  if (!data) throw CorruptHeader("missing data chunk");
  if (channels == 0 || rate == 0) throw CorruptHeader("zero channels or sample rate");

  const bool pcm16 = *format == kFormatPcm && bits == 16;
  const bool f32 = *format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32) {
    throw UnsupportedEncoding("format tag " + std::to_string(*format) + " with " + std::to_string(bits) +
                              " bits per sample");
  }
  const std::size_t bytes_per_sample = bits / 8;
  if (block_align != channels * bytes_per_sample) throw CorruptHeader("block alignment disagrees with format");

  const std::size_t frames = data_size / block_align;
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t* p = data + i * block_align + c * bytes_per_sample;
      if (pcm16) {
        acc += static_cast<std::int16_t>(get_u16(p)) / 32768.0;
      } else {
        const float v = std::bit_cast<float>(get_u32(p));
        acc += std::isfinite(v) ? std::clamp(static_cast<double>(v), -1.0, 1.0) : 0.0;
      }
    }
    w.samples[i] = acc / channels;
  }
  return w;
}

Waveform load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_wav(bytes);
}

std::vector<std::uint8_t> encode_wav_pcm16(const std::vector<std::vector<double>>& channels,
                                           std::uint32_t sample_rate) {
  if (channels.empty()) throw DimensionMismatch("no channels to encode");
  const std::size_t frames = channels[0].size();
  for (const auto& c : channels) {
    if (c.size() != frames) throw DimensionMismatch("channels differ in length");
  }
  const auto nc = static_cast<std::uint16_t>(channels.size());
  const auto data_size = static_cast<std::uint32_t>(frames * nc * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_size);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, nc);
  put_u32(out, sample_rate);
  put_u32(out, sample_rate * nc * 2);
  put_u16(out, static_cast<std::uint16_t>(nc * 2));
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_size);
  for (std::size_t i = 0; i < frames; ++i) {
    for (const auto& c : channels) {
      const double v = std::clamp(c[i], -1.0, 32767.0 / 32768.0);
      put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(v * 32768.0))));
    }
  }
  return out;
}

Waveform resample_linear(const Waveform& w, double target_rate) {
  if (!(w.sample_rate > 0) || !(target_rate > 0)) throw Error("sample rates must be positive");
  if (w.sample_rate == target_rate || w.samples.empty()) return {w.samples, target_rate};
  const double ratio = w.sample_rate / target_rate;
  const auto n_out = static_cast<std::size_t>(
      std::llround(static_cast<double>(w.samples.size()) * target_rate / w.sample_rate));
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  const std::size_t last = w.samples.size() - 1;
  for (std::size_t i = 0; i < n_out; ++i) {
    const double t = static_cast<double>(i) * ratio;
    const auto j = static_cast<std::size_t>(t);
    if (j >= last) {
      out.samples[i] = w.samples[last];
      continue;
    }
    const double a = t - static_cast<double>(j);
    out.samples[i] = (1.0 - a) * w.samples[j] + a * w.samples[j + 1];
  }
  return out;
}

Tensor mel_filterbank(const MelConfig& cfg) {
  const std::size_t bins = cfg.n_fft / 2 + 1;
  Tensor fb({cfg.n_mels, bins});
  const double m_lo = hz_to_mel(cfg.f_min), m_hi = hz_to_mel(cfg.f_max);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(m_lo + (m_hi - m_lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  }
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * cfg.sample_rate / static_cast<double>(cfg.n_fft);
      double v = 0.0;
      if (f > lo && f <= mid) v = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) v = (hi - f) / (hi - mid);
      fb(m, b) = v;
    }
  }
  return fb;
}

Tensor mel_features(const Waveform& w, const MelConfig& cfg) {
  const Waveform x = resample_linear(w, cfg.sample_rate);
  const auto win = static_cast<std::size_t>(std::lround(cfg.window_ms * 1e-3 * cfg.sample_rate));
  const auto hop = static_cast<std::size_t>(std::lround(cfg.hop_ms * 1e-3 * cfg.sample_rate));
  if (win == 0 || hop == 0 || win > cfg.n_fft) throw Error("mel window must be in 1..n_fft samples");
  if (x.samples.size() < win) {
    throw TooShort("waveform has " + std::to_string(x.samples.size()) + " samples, one window needs " +
                   std::to_string(win));
  }
  const std::size_t rows = (x.samples.size() - win) / hop + 1;
  const std::size_t bins = cfg.n_fft / 2 + 1;
  const Tensor fb = mel_filterbank(cfg);

  std::vector<double> hann(win);
  for (std::size_t i = 0; i < win; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(win));
  }

  double* in = fftw_alloc_real(cfg.n_fft);
  fftw_complex* spec = fftw_alloc_complex(bins);
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(plan_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(cfg.n_fft), in, spec, FFTW_ESTIMATE);
  }

  Tensor out({rows, cfg.n_mels});
  std::vector<double> power(bins);
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill(in, in + cfg.n_fft, 0.0);
    for (std::size_t i = 0; i < win; ++i) in[i] = x.samples[r * hop + i] * hann[i];
    fftw_execute_dft_r2c(plan, in, spec);
    for (std::size_t b = 0; b < bins; ++b) power[b] = spec[b][0] * spec[b][0] + spec[b][1] * spec[b][1];
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t b = 0; b < bins; ++b) e += fb(m, b) * power[b];
      out(r, m) = std::log(e + 1e-10);
    }
  }
  {
    std::lock_guard<std::mutex> lock(plan_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(spec);

  if (cfg.standardize) {
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double mean = 0.0;
      for (std::size_t r = 0; r < rows; ++r) mean += out(r, m);
      mean /= static_cast<double>(rows);
      double var = 0.0;
      for (std::size_t r = 0; r < rows; ++r) var += (out(r, m) - mean) * (out(r, m) - mean);
      var /= static_cast<double>(rows);
      const double sd = std::sqrt(var);
      const bool constant = sd <= 1e-8 * std::max(1.0, std::abs(mean));
      for (std::size_t r = 0; r < rows; ++r) out(r, m) = constant ? 0.0 : (out(r, m) - mean) / sd;
    }
  }
  return out;
}

Tensor interpolate_to_frames(const Tensor& features, std::size_t n) {
  if (features.rank() != 2 || features.rows() == 0) throw EmptyInput("feature matrix is empty");
  if (n == 0) throw EmptyInput("target frame count is zero");
  const std::size_t r = features.rows(), d = features.cols();
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    if (r == 1 || n == 1) {
      for (std::size_t c = 0; c < d; ++c) out(i, c) = features(0, c);
      continue;
    }
    // Endpoints land exactly on source rows; interior points interpolate.
    const double t = static_cast<double>(i) * static_cast<double>(r - 1) / static_cast<double>(n - 1);
    auto j = static_cast<std::size_t>(t);
    if (j >= r - 1) j = r - 2;
    const double a = t - static_cast<double>(j);
    for (std::size_t c = 0; c < d; ++c) out(i, c) = (1.0 - a) * features(j, c) + a * features(j + 1, c);
  }
  return out;
}

std::size_t frame_count(const Waveform& w, double fps) {
  const auto n = static_cast<std::size_t>(std::llround(w.duration() * fps));
  return std::max<std::size_t>(n, 1);
}

AudioFeatures features_from_wav(const Waveform& w, double fps, const MelConfig& cfg,
                                std::optional<std::size_t> frames) {
  const Tensor mel = mel_features(w, cfg);
  return {interpolate_to_frames(mel, frames.value_or(frame_count(w, fps))), fps};
}

AudioFeatures load_features(const std::filesystem::path& path, std::optional<std::size_t> frames, double fps) {
  Tensor t = btsr::load(path);
  if (t.rank() != 2) {
    throw FormatError("feature file " + path.string() + " has rank " + std::to_string(t.rank()) + ", expected 2");
  }
  if (frames && *frames != t.rows()) t = interpolate_to_frames(t, *frames);
  return {std::move(t), fps};
}

void save_features(const std::filesystem::path& path, const Tensor& features) {
  if (features.rank() != 2) throw FormatError("features must be a rank-2 tensor");
  btsr::save(path, features);
}

}  // namespace said::audio
