#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "common.hpp"

namespace {

/// Most specific library error name for the diagnostic line.
const char* error_kind(const std::exception& e) {
  using namespace said;
#define SAID_KIND(T) \
  if (dynamic_cast<const T*>(&e)) return #T
  if (dynamic_cast<const cli::UsageError*>(&e)) return "UsageError";
  SAID_KIND(ParseError);
  SAID_KIND(CorruptHeader);
  SAID_KIND(UnsupportedEncoding);
  SAID_KIND(IndexOutOfRange);
  SAID_KIND(FormatError);
  SAID_KIND(ShapeMismatch);
  SAID_KIND(DimensionMismatch);
  SAID_KIND(TooShort);
  SAID_KIND(EmptyInput);
  SAID_KIND(InvalidConfig);
  SAID_KIND(Degenerate);
  SAID_KIND(NoCompatibleFace);
  SAID_KIND(NotPositiveDefinite);
  SAID_KIND(NotSymmetric);
  SAID_KIND(NotPSD);
  SAID_KIND(NaNLoss);
  SAID_KIND(DegenerateTriangle);
  SAID_KIND(SingularSystem);
  SAID_KIND(RankDeficientBlendshapes);
  SAID_KIND(AllMaskedRow);
  SAID_KIND(Infeasible);
  SAID_KIND(NumericalError);
#undef SAID_KIND
  return "Error";
}

int fail(const std::exception& e, int code) {
  said::cli::report_error(error_kind(e), e.what());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace said;
  CLI::App app{"Speech-driven blendshape animation pipeline"};
  app.set_version_flag("--version", SAID_VERSION);
  app.require_subcommand(1);

  int result = cli::kExitOk;
  cli::add_build_blendshapes(app, result);
  cli::add_fit(app, result);
  cli::add_train(app, result);
  cli::add_sample(app, result);
  cli::add_edit(app, result);
  cli::add_train_vae(app, result);
  cli::add_eval(app, result);
  cli::add_reconstruct(app, result);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitUsage;
  } catch (const NumericalError& e) {
    return fail(e, cli::kExitNumerical);
  } catch (const std::exception& e) {
    // Format, shape and I/O problems are all usage errors.
    return fail(e, cli::kExitUsage);
  }
  return result;
}
