// train, sample and edit: the diffusion-side stages.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>

#include "commands.hpp"
#include "common.hpp"
#include "model_io.hpp"
#include "said/denoiser/trainer.hpp"

namespace said::cli {

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;   // "init"
constexpr std::uint64_t kBatchStream = 0x62617463;  // "batc"

/// Sampler flags shared by sample and edit.
struct GuidanceFlags {
  double gamma = 2.0;
  std::size_t steps = 1000;
  std::string sampler = "ddim";
  double eta = 0.0;
  CLI::Option* gamma_opt = nullptr;
  CLI::Option* steps_opt = nullptr;
  CLI::Option* sampler_opt = nullptr;
  CLI::Option* eta_opt = nullptr;

  void add(CLI::App* sub) {
    gamma_opt = sub->add_option("--gamma", gamma, "Classifier-free guidance scale");
    steps_opt = sub->add_option("--steps", steps, "Number of sampling steps")->check(CLI::PositiveNumber);
    sampler_opt = sub->add_option("--sampler", sampler, "ddim or ddpm")->check(CLI::IsMember({"ddim", "ddpm"}));
    eta_opt = sub->add_option("--eta", eta, "DDIM stochasticity");
  }

  /// CLI flag > config file > default.
  diffusion::GuidanceConfig resolve(const nlohmann::json& config) const {
    diffusion::GuidanceConfig g = section(config, "guidance").get<diffusion::GuidanceConfig>();
    if (gamma_opt->count()) g.gamma = gamma;
    if (steps_opt->count()) g.steps = steps;
    if (sampler_opt->count()) g.sampler = sampler == "ddim" ? diffusion::Sampler::DDIM : diffusion::Sampler::DDPM;
    if (eta_opt->count()) g.eta = eta;
    return g;
  }
};

coeff_fit::CoeffSequence wrap(Tensor values, const LoadedModel& m) {
  coeff_fit::CoeffSequence seq;
  seq.values = std::move(values);
  seq.names = m.names;
  seq.frame_rate = m.fps;
  return seq;
}

}  // namespace

void add_train(CLI::App& app, int& result) {
  struct Options {
    fs::path data, out, config;
    std::uint64_t seed = 0;
    std::size_t steps = 10000, batch = 8, hidden = 64, window = 120, log_every = 100;
    double lr = 1e-5, fps = 60.0;
    bool no_velocity = false;
  };
  auto o = std::make_shared<Options>();
  CLI::App* sub = app.add_subcommand("train", "Train the conditional denoiser on paired coefficients and audio");
  sub->add_option("--data", o->data, "Directory of <name>.csv with matching <name>.wav or <name>.btsr")
      ->required();
  sub->add_option("--out", o->out, "Checkpoint directory")->required();
  sub->add_option("--config", o->config, "JSON config (sections 'denoiser', 'train', 'schedule')");
  CLI::Option* seed = sub->add_option("--seed", o->seed, "Random seed");
  CLI::Option* steps = sub->add_option("--steps", o->steps, "Training steps")->check(CLI::PositiveNumber);
  CLI::Option* batch = sub->add_option("--batch", o->batch, "Batch size")->check(CLI::PositiveNumber);
  CLI::Option* lr = sub->add_option("--lr", o->lr, "Learning rate");
  CLI::Option* hidden = sub->add_option("--hidden", o->hidden, "Denoiser width");
  CLI::Option* window = sub->add_option("--window", o->window, "Training window in frames");
  CLI::Option* no_vel = sub->add_flag("--no-velocity-loss", o->no_velocity, "Ablate the velocity loss");
  sub->add_option("--log-every", o->log_every, "Progress interval in steps")->capture_default_str();
  sub->add_option("--fps", o->fps, "Coefficient frame rate")->capture_default_str();

  sub->callback([=, &result] {
    const nlohmann::json file = load_config(o->config);
    const std::uint64_t run_seed = seed->count() ? o->seed : file.value("seed", std::uint64_t{0});
    const auto dataset = load_paired_dataset(o->data, o->fps);
    const auto& names = dataset.front().coeffs.names;

    denoiser::DenoiserConfig dcfg = section(file, "denoiser").get<denoiser::DenoiserConfig>();
    dcfg.channels = dataset.front().coeffs.channels();
    dcfg.cond_dim = dataset.front().features.cols();
    if (hidden->count()) dcfg.hidden = o->hidden;

    const nlohmann::json train_section = section(file, "train");
    denoiser::TrainConfig tcfg = train_section.get<denoiser::TrainConfig>();
    if (steps->count()) tcfg.total_steps = o->steps;
    if (batch->count()) tcfg.batch = o->batch;
    if (lr->count()) tcfg.lr = o->lr;
    if (window->count()) tcfg.window = o->window;
    if (no_vel->count()) tcfg.use_velocity_loss = false;
    if (!train_section.contains("symmetric_pairs")) tcfg.symmetric_pairs = denoiser::default_symmetric_pairs(names);
    const ScheduleConfig scfg = section(file, "schedule").get<ScheduleConfig>();

    std::vector<denoiser::TrainingExample> examples;
    for (const auto& p : dataset) examples.push_back({p.coeffs.values, p.features});

    Rng init = Rng(run_seed).split(kInitStream);
    denoiser::Denoiser model(dcfg, init);
    denoiser::Trainer trainer(model, scfg.build(), tcfg, run_seed, names);
    Rng batches = Rng(run_seed).split(kBatchStream);

    fs::create_directories(o->out);
    std::ofstream log(o->out / "train_log.csv");
    log << "step,loss,loss_simple,loss_velocity,lr\n";
    for (std::size_t s = 0; s < tcfg.total_steps; ++s) {
      const auto batch_examples = denoiser::sample_windows(examples, tcfg.batch, tcfg.window, batches);
      const denoiser::StepStats st = trainer.step(batch_examples);
      log << st.step << ',' << st.loss << ',' << st.loss_simple << ',' << st.loss_velocity << ',' << st.lr << '\n';
      if (o->log_every > 0 && (s % o->log_every == 0 || s + 1 == tcfg.total_steps))
        std::cerr << "step " << st.step << " loss " << st.loss << '\n';
    }

    const nlohmann::json config = {{"denoiser", dcfg}, {"train", tcfg}, {"schedule", scfg}, {"fps", o->fps}};
    denoiser::save_checkpoint(o->out, trainer.ema_model(), tcfg.total_steps, true,
                              {{"channel_names", names}, {"fps", o->fps}, {"schedule", scfg}, {"seed", run_seed}});
    write_manifest(o->out / "run_manifest.json", "train", config, run_seed,
                   {{"pairs", dataset.size()}, {"parameters", model.parameter_count()}});
    std::cout << "wrote checkpoint to " << o->out.string() << '\n';
    result = kExitOk;
  });
}

void add_sample(CLI::App& app, int& result) {
  struct Options {
    fs::path checkpoint, condition, out, config;
    std::size_t count = 8, frames = 0, jobs = 1;
    std::uint64_t seed = 0;
    GuidanceFlags guidance;
  };
  auto o = std::make_shared<Options>();
  CLI::App* sub = app.add_subcommand("sample", "Generate coefficient sequences for one audio condition");
  sub->add_option("--checkpoint", o->checkpoint, "Checkpoint directory")->required();
  sub->add_option("--condition", o->condition, "WAV file or frames x D BTSR features")->required();
  sub->add_option("--out-dir", o->out, "Output directory for sample_NNN.csv")->required();
  sub->add_option("--count", o->count, "Number of samples")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--seed", o->seed, "Master seed; sample i uses sub-stream i")->capture_default_str();
  sub->add_option("--frames", o->frames, "Override the frame count (default: audio duration)");
  sub->add_option("--config", o->config, "JSON config (section 'guidance')");
  sub->add_option("--jobs", o->jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  o->guidance.add(sub);

  sub->callback([o, &result] {
    const diffusion::GuidanceConfig g = o->guidance.resolve(load_config(o->config));
    const LoadedModel m = load_model(o->checkpoint);
    const std::optional<std::size_t> frames = o->frames ? std::optional(o->frames) : std::nullopt;
    const Tensor cond = load_condition(o->condition, frames, m.fps).frames;
    if (cond.cols() != m.model.config().cond_dim)
      throw DimensionMismatch("condition has " + std::to_string(cond.cols()) + " features, model expects " +
                              std::to_string(m.model.config().cond_dim));
    const diffusion::NoiseSchedule schedule = m.schedule.build();
    const auto fn = m.model.as_function();
    fs::create_directories(o->out);
    std::vector<std::string> files(o->count);
    const Rng master(o->seed);
    parallel_for(o->count, o->jobs, [&](std::size_t i) {
      Rng rng = master.split(i);
      const Tensor u = diffusion::sample(fn, &cond, cond.rows(), m.model.config().channels, schedule, g, rng);
      char name[32];
      std::snprintf(name, sizeof name, "sample_%03zu.csv", i);
      coeff_fit::save_coeff_csv(o->out / name, wrap(u, m));
      files[i] = name;
    });
    write_manifest(o->out / "run_manifest.json", "sample",
                   {{"guidance", g}, {"checkpoint", o->checkpoint.string()}, {"condition", o->condition.string()},
                    {"frames", cond.rows()}, {"count", o->count}},
                   o->seed, {{"files", files}, {"substreams", "sample i uses split(i) of the master seed"}});
    std::cout << "wrote " << o->count << " samples to " << o->out.string() << '\n';
    result = kExitOk;
  });
}

void add_edit(CLI::App& app, int& result) {
  struct Options {
    fs::path checkpoint, condition, reference, mask, out, config;
    std::uint64_t seed = 0;
    GuidanceFlags guidance;
  };
  auto o = std::make_shared<Options>();
  CLI::App* sub = app.add_subcommand("edit", "Regenerate the unmasked part of a reference sequence");
  sub->add_option("--checkpoint", o->checkpoint, "Checkpoint directory")->required();
  sub->add_option("--condition", o->condition, "WAV file or frames x D BTSR features")->required();
  sub->add_option("--reference", o->reference, "Reference coefficient CSV")->required();
  sub->add_option("--mask", o->mask, "CSV with the reference layout; 1 keeps the reference value")->required();
  sub->add_option("--out", o->out, "Output coefficient CSV")->required();
  sub->add_option("--seed", o->seed, "Random seed")->capture_default_str();
  sub->add_option("--config", o->config, "JSON config (section 'guidance')");
  o->guidance.add(sub);

  sub->callback([o, &result] {
    const diffusion::GuidanceConfig g = o->guidance.resolve(load_config(o->config));
    const LoadedModel m = load_model(o->checkpoint);
    require_file(o->reference, "reference");
    require_file(o->mask, "mask");
    const coeff_fit::CoeffSequence ref = coeff_fit::load_coeff_csv(o->reference, m.fps);
    const coeff_fit::CoeffSequence mask = coeff_fit::load_coeff_csv(o->mask, m.fps);
    if (ref.names != m.names) throw UsageError("reference columns do not match the checkpoint's channel names");
    if (mask.names != ref.names || mask.frames() != ref.frames())
      throw UsageError("mask must have the reference's columns and frame count");
    const Tensor cond = load_condition(o->condition, ref.frames(), m.fps).frames;
    Rng rng(o->seed);
    const Tensor u =
        diffusion::edit(m.model.as_function(), &cond, ref.values, mask.values, m.schedule.build(), g, rng);
    coeff_fit::save_coeff_csv(o->out, wrap(u, m));
    write_manifest(fs::path(o->out.string() + ".manifest.json"), "edit",
                   {{"guidance", g},
                    {"checkpoint", o->checkpoint.string()},
                    {"condition", o->condition.string()},
                    {"reference", o->reference.string()},
                    {"mask", o->mask.string()}},
                   o->seed);
    std::cout << "wrote " << o->out.string() << '\n';
    result = kExitOk;
  });
}

}  // namespace said::cli
