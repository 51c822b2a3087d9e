#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "said/numerics/tensor.hpp"

namespace said::audio {

/// Mono samples in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  double sample_rate = 16000.0;

  double duration() const { return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0; }
};

/// Frame-aligned conditioning features (N x D).
struct AudioFeatures {
  Tensor frames;
  double frame_rate = 60.0;

  std::size_t rows() const { return frames.rank() == 2 ? frames.rows() : 0; }
  std::size_t dim() const { return frames.rank() == 2 ? frames.cols() : 0; }
};

/// RIFF/WAVE with 16-bit PCM or 32-bit float samples (plain or extensible
/// format tag). Channels are averaged. Throws CorruptHeader and
/// UnsupportedEncoding.
Waveform parse_wav(std::span<const std::uint8_t> bytes);
Waveform load_wav(const std::filesystem::path& path);

/// 16-bit PCM encoding, mono or interleaved channels.
std::vector<std::uint8_t> encode_wav_pcm16(const std::vector<std::vector<double>>& channels, std::uint32_t sample_rate);

/// Linear-interpolation resampling.
Waveform resample_linear(const Waveform& w, double target_rate);

struct MelConfig {
  std::size_t n_mels = 40;
  double sample_rate = 16000.0;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t n_fft = 512;
  double f_min = 0.0;
  double f_max = 8000.0;
  bool standardize = true;
};

/// HTK-style triangular filters, n_mels x (n_fft / 2 + 1).
Tensor mel_filterbank(const MelConfig& cfg = {});

/// Log-mel energies of Hann-windowed frames, one row per hop:
/// rows = floor((len - win) / hop) + 1 after resampling to cfg.sample_rate.
/// Columns are standardized over the utterance; near-constant columns become 0.
/// Throws TooShort when fewer samples than one window remain.
Tensor mel_features(const Waveform& w, const MelConfig& cfg = {});

/// Linear interpolation along time to exactly `n` rows; endpoints map to
/// endpoints. Throws EmptyInput for an empty matrix or n == 0.
Tensor interpolate_to_frames(const Tensor& features, std::size_t n);

/// Animation frame count for a waveform at `fps`, at least 1.
std::size_t frame_count(const Waveform& w, double fps);

/// Mel features interpolated to the animation frame count.
AudioFeatures features_from_wav(const Waveform& w, double fps = 60.0, const MelConfig& cfg = {},
                                std::optional<std::size_t> frames = std::nullopt);

/// Rank-2 BTSR feature file, optionally interpolated to `frames` rows.
AudioFeatures load_features(const std::filesystem::path& path, std::optional<std::size_t> frames = std::nullopt,
                            double fps = 60.0);
void save_features(const std::filesystem::path& path, const Tensor& features);

}  // namespace said::audio
