// train-vae and eval: feature extractor training and the quality metrics.

#include <fstream>
#include <iostream>
#include <memory>

#include "commands.hpp"
#include "common.hpp"
#include "model_io.hpp"
#include "said/metrics/distances.hpp"
#include "said/metrics/vae.hpp"
#include "said/numerics/btsr.hpp"

namespace said::cli {

namespace {

/// Generated samples grouped by condition: one group per subdirectory, or
/// the directory itself when it holds the CSVs directly.
std::vector<std::vector<coeff_fit::CoeffSequence>> load_groups(const fs::path& dir) {
  require_dir(dir, "generated");
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) subdirs.push_back(e.path());
  std::sort(subdirs.begin(), subdirs.end());
  std::vector<std::vector<coeff_fit::CoeffSequence>> groups;
  std::vector<coeff_fit::CoeffSequence> flat;
  for (const auto& csv : list_files(dir, ".csv")) flat.push_back(coeff_fit::load_coeff_csv(csv));
  if (!flat.empty()) groups.push_back(std::move(flat));
  for (const auto& s : subdirs) {
    std::vector<coeff_fit::CoeffSequence> g;
    for (const auto& csv : list_files(s, ".csv")) g.push_back(coeff_fit::load_coeff_csv(csv));
    if (!g.empty()) groups.push_back(std::move(g));
  }
  if (groups.empty()) throw UsageError("no coefficient CSVs in " + dir.string());
  return groups;
}

Tensor features_of(const metrics::Vae& vae, const std::vector<const coeff_fit::CoeffSequence*>& seqs,
                   std::size_t jobs) {
  Tensor out({seqs.size(), vae.config().latent});
  parallel_for(seqs.size(), jobs, [&](std::size_t i) {
    if (seqs[i]->channels() != vae.config().channels)
      throw DimensionMismatch("sequence has " + std::to_string(seqs[i]->channels()) + " channels, VAE expects " +
                              std::to_string(vae.config().channels));
    const Tensor f = metrics::extract_features(vae, seqs[i]->values);
    std::copy(f.data().begin(), f.data().end(), out.row(i).begin());
  });
  return out;
}

}  // namespace

void add_train_vae(CLI::App& app, int& result) {
  struct Options {
    fs::path data, out, config;
    std::uint64_t seed = 0;
    std::size_t steps = 10000, batch = 8, latent = 16, hidden = 32, window = 120, log_every = 100;
    double lr = 1e-4;
  };
  auto o = std::make_shared<Options>();
  CLI::App* sub = app.add_subcommand("train-vae", "Train the VAE feature extractor used by eval");
  sub->add_option("--data", o->data, "Directory of coefficient CSVs")->required();
  sub->add_option("--out", o->out, "Output VAE directory")->required();
  sub->add_option("--config", o->config, "JSON config (section 'vae')");
  CLI::Option* seed = sub->add_option("--seed", o->seed, "Random seed");
  CLI::Option* steps = sub->add_option("--steps", o->steps, "Training steps");
  CLI::Option* batch = sub->add_option("--batch", o->batch, "Batch size")->check(CLI::PositiveNumber);
  CLI::Option* latent = sub->add_option("--latent", o->latent, "Latent dimension")->check(CLI::PositiveNumber);
  CLI::Option* hidden = sub->add_option("--hidden", o->hidden, "Channel width")->check(CLI::PositiveNumber);
  CLI::Option* window = sub->add_option("--window", o->window, "Window length in frames (multiple of 4)");
  CLI::Option* lr = sub->add_option("--lr", o->lr, "Learning rate");
  sub->add_option("--log-every", o->log_every, "Progress interval in steps")->capture_default_str();

  sub->callback([=, &result] {
    const nlohmann::json file = load_config(o->config);
    const std::uint64_t run_seed = seed->count() ? o->seed : file.value("seed", std::uint64_t{0});
    metrics::VaeConfig cfg = section(file, "vae").get<metrics::VaeConfig>();
    if (steps->count()) cfg.steps = o->steps;
    if (batch->count()) cfg.batch = o->batch;
    if (latent->count()) cfg.latent = o->latent;
    if (hidden->count()) cfg.hidden = o->hidden;
    if (window->count()) cfg.window = o->window;
    if (lr->count()) cfg.lr = o->lr;
    const auto data = load_coeff_dir(o->data, 60.0);
    cfg.channels = data.front().channels();
    std::vector<Tensor> seqs;
    for (const auto& s : data) {
      if (s.names != data.front().names) throw UsageError("coefficient CSVs have different columns");
      seqs.push_back(s.values);
    }
    Rng rng(run_seed);
    const metrics::Vae vae = metrics::train_vae(seqs, cfg, rng, [&](const metrics::VaeStep& st) {
      if (o->log_every > 0 && (st.step % o->log_every == 0 || st.step + 1 == cfg.steps))
        std::cerr << "step " << st.step << " loss " << st.loss << " beta " << st.beta << '\n';
    });
    metrics::save_vae(o->out, vae);
    write_manifest(o->out / "run_manifest.json", "train-vae", {{"vae", cfg}}, run_seed,
                   {{"sequences", seqs.size()}, {"channel_names", data.front().names}});
    std::cout << "wrote VAE to " << o->out.string() << '\n';
    result = kExitOk;
  });
}

void add_eval(CLI::App& app, int& result) {
  struct Options {
    fs::path real, generated, vae, out;
    std::uint64_t seed = 0;
    std::size_t repeats = 10, components = 5, restarts = 3, subset = metrics::kMultimodalitySubsetSize, jobs = 1;
  };
  auto o = std::make_shared<Options>();
  CLI::App* sub = app.add_subcommand("eval", "Multimodality, FD and WInD of generated against real sequences");
  sub->add_option("--real", o->real, "Directory of real coefficient CSVs")->required();
  sub->add_option("--generated", o->generated,
                  "Directory of generated CSVs; subdirectories are treated as one condition each")
      ->required();
  sub->add_option("--vae", o->vae, "VAE directory from train-vae")->required();
  sub->add_option("--out", o->out, "Output metrics JSON")->required();
  sub->add_option("--seed", o->seed, "Master seed of the GMM refits")->capture_default_str();
  sub->add_option("--repeats", o->repeats, "WInD refits")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--components", o->components, "GMM components")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--restarts", o->restarts, "EM restarts per fit")->capture_default_str();
  sub->add_option("--subset-size", o->subset, "Multimodality subset size S_l")->capture_default_str();
  sub->add_option("--jobs", o->jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

  sub->callback([o, &result] {
    const metrics::Vae vae = metrics::load_vae(o->vae);
    const auto real = load_coeff_dir(o->real, 60.0);
    const auto groups = load_groups(o->generated);

    std::vector<const coeff_fit::CoeffSequence*> real_ptrs, gen_ptrs;
    for (const auto& s : real) real_ptrs.push_back(&s);
    for (const auto& g : groups)
      for (const auto& s : g) gen_ptrs.push_back(&s);
    const Tensor real_f = features_of(vae, real_ptrs, o->jobs);
    const Tensor gen_f = features_of(vae, gen_ptrs, o->jobs);

    // Multimodality pairs the first S_l samples of a condition with the next S_l.
    std::size_t s_l = o->subset;
    for (const auto& g : groups) s_l = std::min(s_l, g.size() / 2);
    nlohmann::json multimodality = nullptr;
    if (s_l > 0) {
      const std::size_t d = vae.config().latent;
      Tensor a({groups.size(), s_l, d}), b({groups.size(), s_l, d});
      std::size_t offset = 0;
      for (std::size_t c = 0; c < groups.size(); ++c) {
        for (std::size_t i = 0; i < s_l; ++i)
          for (std::size_t k = 0; k < d; ++k) {
            a.at(c, i, k) = gen_f(offset + i, k);
            b.at(c, i, k) = gen_f(offset + s_l + i, k);
          }
        offset += groups[c].size();
      }
      multimodality = metrics::multimodality(a, b);
    }

    const double fd = metrics::frechet_distance(metrics::gaussian_stats(real_f), metrics::gaussian_stats(gen_f));
    metrics::GmmOptions gmm;
    gmm.components = o->components;
    gmm.restarts = o->restarts;
    const metrics::WindSummary w = metrics::wind_repeated(real_f, gen_f, o->repeats, gmm, Rng(o->seed));

    fs::path stem = o->out;
    stem.replace_extension();
    btsr::save(fs::path(stem.string() + "_real_features.btsr"), real_f);
    btsr::save(fs::path(stem.string() + "_generated_features.btsr"), gen_f);

    const nlohmann::json config = {{"repeats", o->repeats},     {"components", o->components},
                                   {"restarts", o->restarts},   {"subset_size", o->subset},
                                   {"vae", o->vae.string()},    {"real", o->real.string()},
                                   {"generated", o->generated.string()}};
    nlohmann::json report = {{"multimodality", multimodality},
                             {"multimodality_subset_size", s_l},
                             {"conditions", groups.size()},
                             {"fd", fd},
                             {"wind_mean", w.mean},
                             {"wind_std", w.std},
                             {"wind_values", w.values},
                             {"real_sequences", real.size()},
                             {"generated_sequences", gen_ptrs.size()},
                             {"av_offset", "unavailable"},
                             {"av_confidence", "unavailable"}};
    write_manifest(o->out, "eval", config, o->seed, report);
    std::cout << report.dump(2) << '\n';
    result = kExitOk;
  });
}

}  // namespace said::cli
