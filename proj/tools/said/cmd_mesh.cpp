// build-blendshapes, fit and reconstruct: the mesh-side stages.

#include <cstdio>
#include <iostream>
#include <memory>

#include "commands.hpp"
#include "common.hpp"
#include "said/coeff_fit/coeff_fit.hpp"
#include "said/deformation_transfer/deformation_transfer.hpp"
#include "said/mesh/blendshape_model.hpp"
#include "said/numerics/btsr.hpp"

namespace said::cli {

namespace {

std::vector<std::uint32_t> read_mask(const fs::path& path) {
  require_file(path, "target mask");
  return mesh::read_index_list(path);
}

coeff_fit::MotionSequence load_motion(const fs::path& path, std::size_t coords, double fps) {
  coeff_fit::MotionSequence motion;
  motion.frame_rate = fps;
  if (fs::is_directory(path)) {
    for (const auto& obj : list_files(path, ".obj")) motion.frames.push_back(mesh::load_obj(obj).flat_positions());
  } else {
    require_file(path, "motion");
    const Tensor t = btsr::load(path);
    if (t.rank() != 2) throw FormatError("motion BTSR must be frames x 3M, got " + shape_string(t.shape()));
    for (std::size_t n = 0; n < t.rows(); ++n) motion.frames.emplace_back(t.row(n).begin(), t.row(n).end());
  }
  if (motion.frames.empty()) throw UsageError("motion " + path.string() + " has no frames");
  for (const auto& f : motion.frames)
    if (f.size() != coords)
      throw DimensionMismatch("motion frame has " + std::to_string(f.size() / 3) + " vertices, model has " +
                              std::to_string(coords / 3));
  return motion;
}

}  // namespace

void add_build_blendshapes(CLI::App& app, int& result) {
  struct Options {
    fs::path source_template, source_dir, target_template, correspondence, target_mask, out, config;
    double radius_scale = 3.0;
    bool allow_unmatched = false;
  };
  auto o = std::make_shared<Options>();
  CLI::App* sub = app.add_subcommand("build-blendshapes", "Transfer source blendshapes onto a target template");
  sub->add_option("--source-template", o->source_template, "Source neutral OBJ")->required();
  sub->add_option("--source-dir", o->source_dir, "Directory of source blendshape OBJs (names from file stems)")
      ->required();
  sub->add_option("--target-template", o->target_template, "Target neutral OBJ")->required();
  sub->add_option("--correspondence", o->correspondence, "Landmark pairs: 'src_idx tgt_idx' per line")->required();
  sub->add_option("--target-mask", o->target_mask, "Target vertex indices to deform (others keep zero deltas)");
  sub->add_option("--out", o->out, "Output model directory")->required();
  CLI::Option* radius = sub->add_option("--radius-scale", o->radius_scale, "Matching radius in mean edge lengths");
  CLI::Option* unmatched =
      sub->add_flag("--allow-unmatched", o->allow_unmatched, "Keep target faces without a compatible source face");
  sub->add_option("--config", o->config, "JSON config (section 'build')");

  sub->callback([o, radius, unmatched, &result] {
    const nlohmann::json file = section(load_config(o->config), "build");
    dt::CorrespondenceOptions opts;
    opts.radius_scale = radius->count() ? o->radius_scale : file.value("radius_scale", opts.radius_scale);
    opts.allow_unmatched = unmatched->count() ? o->allow_unmatched : file.value("allow_unmatched", false);

    require_file(o->source_template, "source template");
    require_file(o->target_template, "target template");
    require_file(o->correspondence, "correspondence");
    const mesh::TriMesh src = mesh::load_obj(o->source_template);
    const mesh::TriMesh tgt = mesh::load_obj(o->target_template);
    std::vector<mesh::TriMesh> shapes;
    std::vector<std::string> names;
    for (const auto& obj : list_files(o->source_dir, ".obj")) {
      shapes.push_back(mesh::load_obj(obj));
      names.push_back(obj.stem().string());
    }
    const auto vc = mesh::load_vertex_correspondence(o->correspondence);
    std::optional<std::vector<std::uint32_t>> mask;
    if (!o->target_mask.empty()) mask = read_mask(o->target_mask);

    dt::BuildReport report;
    const mesh::BlendshapeModel model =
        dt::build_blendshapes_from_landmarks(src, shapes, names, tgt, vc, mask, opts, &report);
    model.save(o->out);

    const nlohmann::json config = {{"radius_scale", opts.radius_scale},
                                   {"allow_unmatched", opts.allow_unmatched},
                                   {"source_template", o->source_template.string()},
                                   {"target_template", o->target_template.string()},
                                   {"target_mask", o->target_mask.string()}};
    write_manifest(o->out / "run_manifest.json", "build-blendshapes", config, std::nullopt,
                   {{"blendshapes", model.size()},
                    {"names", model.names()},
                    {"residual_norms", report.residual_norms},
                    {"unmatched_faces", report.unmatched_faces}});
    std::cout << "wrote " << model.size() << " blendshapes to " << o->out.string() << '\n';
    result = kExitOk;
  });
}

void add_fit(CLI::App& app, int& result) {
  struct Options {
    fs::path model, motion, out, config;
    double delta = 0.1, fps = 60.0;
    int max_iter = 20000;
  };
  auto o = std::make_shared<Options>();
  CLI::App* sub = app.add_subcommand("fit", "Fit blendshape coefficients to a mesh motion sequence");
  sub->add_option("--model", o->model, "Blendshape model directory")->required();
  sub->add_option("--motion", o->motion, "Directory of per-frame OBJs or a frames x 3M BTSR file")->required();
  sub->add_option("--out", o->out, "Output coefficient CSV")->required();
  CLI::Option* delta = sub->add_option("--delta", o->delta, "Largest per-frame coefficient change");
  CLI::Option* iters = sub->add_option("--max-iter", o->max_iter, "ADMM iteration limit");
  sub->add_option("--fps", o->fps, "Frame rate of the motion")->capture_default_str();
  sub->add_option("--config", o->config, "JSON config (section 'qp')");

  sub->callback([o, delta, iters, &result] {
    const nlohmann::json file = section(load_config(o->config), "qp");
    coeff_fit::QPConfig cfg;
    cfg.delta = delta->count() ? o->delta : file.value("delta", cfg.delta);
    cfg.max_iter = iters->count() ? o->max_iter : file.value("max_iter", cfg.max_iter);
    cfg.tol_primal = file.value("tol_primal", cfg.tol_primal);
    cfg.tol_dual = file.value("tol_dual", cfg.tol_dual);
    cfg.rho = file.value("rho", cfg.rho);
    cfg.polish = file.value("polish", cfg.polish);
    if (!(cfg.delta > 0.0)) throw UsageError("--delta must be positive");

    require_dir(o->model, "model");
    const mesh::BlendshapeModel model = mesh::BlendshapeModel::load(o->model);
    const coeff_fit::MotionSequence motion = load_motion(o->motion, 3 * model.vertex_count(), o->fps);
    coeff_fit::QPDiagnostics diag;
    const coeff_fit::CoeffSequence seq = coeff_fit::fit_sequence(model, motion, cfg, &diag);
    coeff_fit::save_coeff_csv(o->out, seq);

    const nlohmann::json config = {{"delta", cfg.delta},         {"max_iter", cfg.max_iter},
                                   {"tol_primal", cfg.tol_primal}, {"tol_dual", cfg.tol_dual},
                                   {"rho", cfg.rho},             {"polish", cfg.polish},
                                   {"fps", o->fps}};
    write_manifest(fs::path(o->out.string() + ".manifest.json"), "fit", config, std::nullopt,
                   {{"frames", seq.frames()},
                    {"channels", seq.channels()},
                    {"converged", diag.converged},
                    {"iterations", diag.iterations},
                    {"primal_residual", diag.primal_residual},
                    {"dual_residual", diag.dual_residual},
                    {"objective", diag.objective},
                    {"polished", diag.polished}});
    if (!diag.converged) {
      report_error("NotConverged", "QP stopped after " + std::to_string(diag.iterations) +
                                       " iterations; output written and flagged in the manifest");
      result = kExitNotConverged;
      return;
    }
    std::cout << "wrote " << seq.frames() << " frames to " << o->out.string() << '\n';
    result = kExitOk;
  });
}

void add_reconstruct(CLI::App& app, int& result) {
  struct Options {
    fs::path model, coeffs, out;
    std::size_t jobs = 1;
  };
  auto o = std::make_shared<Options>();
  CLI::App* sub = app.add_subcommand("reconstruct", "Turn a coefficient CSV into per-frame OBJ meshes");
  sub->add_option("--model", o->model, "Blendshape model directory")->required();
  sub->add_option("--coeffs", o->coeffs, "Coefficient CSV")->required();
  sub->add_option("--out-dir", o->out, "Output directory for frame_NNNNN.obj")->required();
  sub->add_option("--jobs", o->jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

  sub->callback([o, &result] {
    require_dir(o->model, "model");
    require_file(o->coeffs, "coefficients");
    const mesh::BlendshapeModel model = mesh::BlendshapeModel::load(o->model);
    const coeff_fit::CoeffSequence seq = coeff_fit::load_coeff_csv(o->coeffs);
    // Map CSV columns onto the model's blendshape order by name.
    std::vector<std::size_t> column(model.size());
    for (std::size_t k = 0; k < model.size(); ++k) {
      const auto it = std::find(seq.names.begin(), seq.names.end(), model.names()[k]);
      if (it == seq.names.end()) throw UsageError("coefficient CSV has no column '" + model.names()[k] + "'");
      column[k] = static_cast<std::size_t>(it - seq.names.begin());
    }
    fs::create_directories(o->out);
    parallel_for(seq.frames(), o->jobs, [&](std::size_t n) {
      std::vector<double> u(model.size());
      for (std::size_t k = 0; k < model.size(); ++k) u[k] = seq.values(n, column[k]);
      char name[32];
      std::snprintf(name, sizeof name, "frame_%05zu.obj", n);
      mesh::save_obj(o->out / name, model.mesh_for(u));
    });
    write_manifest(o->out / "run_manifest.json", "reconstruct",
                   {{"model", o->model.string()}, {"coeffs", o->coeffs.string()}}, std::nullopt,
                   {{"frames", seq.frames()}});
    std::cout << "wrote " << seq.frames() << " meshes to " << o->out.string() << '\n';
    result = kExitOk;
  });
}

}  // namespace said::cli
