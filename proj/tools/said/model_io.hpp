#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "said/denoiser/denoiser.hpp"
#include "said/diffusion/diffusion.hpp"

namespace said::cli {

/// Linear beta schedule parameters stored with every checkpoint.
struct ScheduleConfig {
  std::size_t steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;

  diffusion::NoiseSchedule build() const { return diffusion::NoiseSchedule::linear(steps, beta_start, beta_end); }
};

void to_json(nlohmann::json& j, const ScheduleConfig& c);
void from_json(const nlohmann::json& j, ScheduleConfig& c);

}  // namespace said::cli

namespace said::diffusion {
void to_json(nlohmann::json& j, const GuidanceConfig& c);
void from_json(const nlohmann::json& j, GuidanceConfig& c);
}  // namespace said::diffusion

namespace said::cli {

/// A trained denoiser with the metadata the samplers need.
struct LoadedModel {
  denoiser::Denoiser model;
  ScheduleConfig schedule;
  std::vector<std::string> names;
  double fps = 60.0;
  nlohmann::json manifest;
};

LoadedModel load_model(const fs::path& checkpoint);

/// One training pair: coefficients from `<stem>.csv` and conditioning from
/// `<stem>.btsr` or `<stem>.wav`, aligned to the coefficient frame count.
struct PairedSequence {
  std::string stem;
  coeff_fit::CoeffSequence coeffs;
  Tensor features;
};

/// Loads every CSV in `dir` that has a conditioning file. Throws UsageError
/// when none is found or channel names differ between files.
std::vector<PairedSequence> load_paired_dataset(const fs::path& dir, double fps);

/// Coefficient CSVs in `dir` (sorted). Throws UsageError for an empty set.
std::vector<coeff_fit::CoeffSequence> load_coeff_dir(const fs::path& dir, double fps);

}  // namespace said::cli
