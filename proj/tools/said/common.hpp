#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "said/audio/audio.hpp"
#include "said/coeff_fit/coeff_fit.hpp"
#include "said/error.hpp"

namespace said::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumerical = 2;
inline constexpr int kExitNotConverged = 3;

/// Missing files, unreadable directories and bad arguments (exit code 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// The 32 ARKit blendshape names used by the default rig, in rig order.
const std::vector<std::string>& arkit_names();

/// 64-bit FNV-1a over a byte string.
std::uint64_t fnv1a(std::string_view bytes);
/// FNV-1a of the compact JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

/// Writes `<dir>/<name>` as a manifest with the command, effective config,
/// its hash, the seed and version information merged with `extra`.
void write_manifest(const fs::path& path, std::string_view command, const nlohmann::json& config,
                    std::optional<std::uint64_t> seed, const nlohmann::json& extra = nlohmann::json::object());

/// Parses a JSON config file; an empty path gives an empty object.
nlohmann::json load_config(const fs::path& path);
/// Object at `key` or an empty object.
nlohmann::json section(const nlohmann::json& config, const std::string& key);

void require_file(const fs::path& path, std::string_view what);
void require_dir(const fs::path& path, std::string_view what);
/// Regular files in `dir` with the given extension, sorted by name.
std::vector<fs::path> list_files(const fs::path& dir, std::string_view extension);

/// Conditioning features from a WAV (log-mel) or BTSR file, interpolated to
/// `frames` rows when given, otherwise to the audio duration at `fps`.
audio::AudioFeatures load_condition(const fs::path& path, std::optional<std::size_t> frames, double fps);

/// Runs body(i) for i in [0, n) on up to `jobs` threads. The first exception
/// is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& body);

/// Prints a one-line JSON diagnostic to stderr.
void report_error(std::string_view kind, std::string_view message);

}  // namespace said::cli
