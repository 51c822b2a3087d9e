#include <benchmark/benchmark.h>

#include "said/coeff_fit/coeff_fit.hpp"
#include "said/deformation_transfer/deformation_transfer.hpp"
#include "said/denoiser/denoiser.hpp"
#include "said/denoiser/trainer.hpp"
#include "said/metrics/distances.hpp"
#include "support/mesh_fixtures.hpp"
#include "support/qp_instances.hpp"

namespace said {
namespace {

void BM_SolveQp(benchmark::State& state) {
  Rng rng(1);
  const auto qp = testing::random_qp_instance(rng, static_cast<std::size_t>(state.range(0)), 32);
  for (auto _ : state) benchmark::DoNotOptimize(coeff_fit::solve_qp(qp));
  state.SetLabel("K=32");
}
BENCHMARK(BM_SolveQp)->Arg(60)->Arg(240)->Unit(benchmark::kMillisecond);

void BM_TransferSolve(benchmark::State& state) {
  Rng rng(2);
  const auto n = static_cast<std::uint32_t>(state.range(0));
  const mesh::TriMesh m = testing::grid_mesh(n);
  const dt::TransferSolver solver(m, testing::identity_faces(m));
  const auto deformed = testing::zero_mean_deformation(m, rng);
  for (auto _ : state) benchmark::DoNotOptimize(solver.transfer(m, deformed));
  state.SetLabel(std::to_string(m.vertex_count()) + " vertices");
}
BENCHMARK(BM_TransferSolve)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_DenoiserForward(benchmark::State& state) {
  denoiser::DenoiserConfig cfg;
  cfg.hidden = static_cast<std::size_t>(state.range(0));
  cfg.zero_init_output = false;
  Rng rng(3);
  const denoiser::Denoiser model(cfg, rng);
  const Tensor u = rng.normal_tensor({120, cfg.channels}), cond = rng.normal_tensor({120, cfg.cond_dim});
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(u, &cond, 500));
  state.SetLabel("N=120");
}
BENCHMARK(BM_DenoiserForward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  denoiser::DenoiserConfig cfg;
  cfg.hidden = 32;
  Rng rng(4);
  denoiser::Denoiser model(cfg, rng);
  denoiser::TrainConfig tc;
  tc.batch = 4;
  denoiser::Trainer trainer(model, diffusion::NoiseSchedule::linear(), tc, 5);
  const std::vector<denoiser::TrainingExample> batch(
      tc.batch, {rng.normal_tensor({60, cfg.channels}), rng.normal_tensor({60, cfg.cond_dim})});
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step(batch));
  state.SetLabel("batch 4, N=60");
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Wind(benchmark::State& state) {
  Rng rng(6);
  const Tensor real = rng.normal_tensor({400, 16}), gen = rng.normal_tensor({400, 16});
  metrics::GmmOptions opts;
  for (auto _ : state) benchmark::DoNotOptimize(metrics::wind_repeated(real, gen, 1, opts, rng));
  state.SetLabel("M=400, d=16, K=5");
}
BENCHMARK(BM_Wind)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace said

BENCHMARK_MAIN();
