#pragma once

#include <CLI11.hpp>

namespace said::cli {

// Each call registers one subcommand whose callback stores its exit code in
// `result`. Library errors propagate to main, which maps them to exit codes.
void add_build_blendshapes(CLI::App& app, int& result);
void add_fit(CLI::App& app, int& result);
void add_train(CLI::App& app, int& result);
void add_sample(CLI::App& app, int& result);
void add_edit(CLI::App& app, int& result);
void add_train_vae(CLI::App& app, int& result);
void add_eval(CLI::App& app, int& result);
void add_reconstruct(CLI::App& app, int& result);

}  // namespace said::cli
