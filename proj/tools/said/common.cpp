#include "common.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

namespace said::cli {

const std::vector<std::string>& arkit_names() {
  static const std::vector<std::string> names = {
      "jawForward",          "jawLeft",           "jawRight",         "jawOpen",
      "mouthClose",          "mouthFunnel",       "mouthPucker",      "mouthLeft",
      "mouthRight",          "mouthSmileLeft",    "mouthSmileRight",  "mouthFrownLeft",
      "mouthFrownRight",     "mouthDimpleLeft",   "mouthDimpleRight", "mouthStretchLeft",
      "mouthStretchRight",   "mouthRollLower",    "mouthRollUpper",   "mouthShrugLower",
      "mouthShrugUpper",     "mouthPressLeft",    "mouthPressRight",  "mouthLowerDownLeft",
      "mouthLowerDownRight", "mouthUpperUpLeft",  "mouthUpperUpRight", "cheekPuff",
      "cheekSquintLeft",     "cheekSquintRight",  "noseSneerLeft",    "noseSneerRight"};
  return names;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const nlohmann::json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config.dump())));
  return buf;
}

void write_manifest(const fs::path& path, std::string_view command, const nlohmann::json& config,
                    std::optional<std::uint64_t> seed, const nlohmann::json& extra) {
  nlohmann::json m = extra.is_object() ? extra : nlohmann::json::object();
  m["command"] = command;
  m["config"] = config;
  m["config_hash"] = config_hash(config);
  m["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  m["versions"] = {{"said", SAID_VERSION},
                   {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path.string());
  out << m.dump(2) << '\n';
}

nlohmann::json load_config(const fs::path& path) {
  if (path.empty()) return nlohmann::json::object();
  require_file(path, "config");
  std::ifstream in(path);
  try {
    nlohmann::json j = nlohmann::json::parse(in);
    if (!j.is_object()) throw UsageError("config " + path.string() + " is not a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
}

nlohmann::json section(const nlohmann::json& config, const std::string& key) {
  if (config.contains(key) && config[key].is_object()) return config[key];
  return nlohmann::json::object();
}

void require_file(const fs::path& path, std::string_view what) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path.string());
}

void require_dir(const fs::path& path, std::string_view what) {
  if (!fs::is_directory(path)) throw UsageError(std::string(what) + " directory not found: " + path.string());
}

std::vector<fs::path> list_files(const fs::path& dir, std::string_view extension) {
  require_dir(dir, "input");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == extension) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

audio::AudioFeatures load_condition(const fs::path& path, std::optional<std::size_t> frames, double fps) {
  require_file(path, "condition");
  if (path.extension() == ".btsr") return audio::load_features(path, frames, fps);
  return audio::features_from_wav(audio::load_wav(path), fps, audio::MelConfig{}, frames);
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

void report_error(std::string_view kind, std::string_view message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace said::cli
