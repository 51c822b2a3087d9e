#include "model_io.hpp"

#include <algorithm>

namespace said::cli {

void to_json(nlohmann::json& j, const ScheduleConfig& c) {
  j = {{"steps", c.steps}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
}

void from_json(const nlohmann::json& j, ScheduleConfig& c) {
  const ScheduleConfig d;
  c.steps = j.value("steps", d.steps);
  c.beta_start = j.value("beta_start", d.beta_start);
  c.beta_end = j.value("beta_end", d.beta_end);
}

}  // namespace said::cli

namespace said::diffusion {

void to_json(nlohmann::json& j, const GuidanceConfig& c) {
  j = {{"gamma", c.gamma},
       {"sampler", c.sampler == Sampler::DDIM ? "ddim" : "ddpm"},
       {"steps", c.steps},
       {"eta", c.eta}};
}

void from_json(const nlohmann::json& j, GuidanceConfig& c) {
  const GuidanceConfig d;
  c.gamma = j.value("gamma", d.gamma);
  const std::string s = j.value("sampler", std::string("ddim"));
  if (s != "ddim" && s != "ddpm") throw InvalidConfig("guidance: sampler must be ddim or ddpm");
  c.sampler = s == "ddim" ? Sampler::DDIM : Sampler::DDPM;
  c.steps = j.value("steps", d.steps);
  c.eta = j.value("eta", d.eta);
}

}  // namespace said::diffusion

namespace said::cli {

LoadedModel load_model(const fs::path& checkpoint) {
  require_file(checkpoint / "manifest.json", "checkpoint manifest");
  denoiser::Checkpoint ckpt = denoiser::load_checkpoint(checkpoint);
  const nlohmann::json& m = ckpt.manifest;
  LoadedModel out{std::move(ckpt.model), m.value("schedule", nlohmann::json::object()).get<ScheduleConfig>(), {},
                  m.value("fps", 60.0), m};
  out.names = m.value("channel_names", std::vector<std::string>{});
  if (out.names.empty())
    for (std::size_t k = 0; k < out.model.config().channels; ++k) out.names.push_back("c" + std::to_string(k));
  if (out.names.size() != out.model.config().channels)
    throw FormatError("checkpoint: channel_names does not match the model width");
  return out;
}

std::vector<PairedSequence> load_paired_dataset(const fs::path& dir, double fps) {
  std::vector<PairedSequence> out;
  for (const auto& csv : list_files(dir, ".csv")) {
    fs::path cond = csv;
    cond.replace_extension(".btsr");
    if (!fs::is_regular_file(cond)) cond.replace_extension(".wav");
    if (!fs::is_regular_file(cond)) continue;
    PairedSequence p;
    p.stem = csv.stem().string();
    p.coeffs = coeff_fit::load_coeff_csv(csv, fps);
    if (p.coeffs.frames() == 0) throw UsageError("empty coefficient file " + csv.string());
    p.features = load_condition(cond, p.coeffs.frames(), fps).frames;
    if (!out.empty() && p.coeffs.names != out.front().coeffs.names)
      throw UsageError("channel names of " + csv.string() + " differ from " + out.front().stem + ".csv");
    if (!out.empty() && p.features.cols() != out.front().features.cols())
      throw UsageError("feature width of " + cond.string() + " differs from the first pair");
    out.push_back(std::move(p));
  }
  if (out.empty()) throw UsageError("no <name>.csv with a matching .btsr or .wav in " + dir.string());
  return out;
}

std::vector<coeff_fit::CoeffSequence> load_coeff_dir(const fs::path& dir, double fps) {
  std::vector<coeff_fit::CoeffSequence> out;
  for (const auto& csv : list_files(dir, ".csv")) out.push_back(coeff_fit::load_coeff_csv(csv, fps));
  if (out.empty()) throw UsageError("no coefficient CSVs in " + dir.string());
  return out;
}

}  // namespace said::cli
