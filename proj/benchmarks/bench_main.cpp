// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "jerkrom/losses.hpp"
#include "jerkrom/nets.hpp"
#include "jerkrom/pdegen.hpp"
#include "jerkrom/train.hpp"

using namespace jerkrom;

namespace {

/// The desktop-scale model: 32x32 input, d_z = 10, Fourier-embedded decoder.
nets::ModelConfig desk_model(int nx = 32) {
  nets::ModelConfig m;
  m.encoder.nx = nx;
  m.encoder.stem_width = 8;
  m.encoder.widths = {8, 16, 32, 64};
  m.decoder.hidden_layers = 4;
  m.decoder.width = 64;
  m.decoder.embedding = nets::Embedding::fourier;
  m.decoder.fourier_frequencies = 6;
  m.odefunc.hidden_layers = 3;
  m.odefunc.width = 64;
  return m;
}

nets::Mat<float> random_fields(Eigen::Index points, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n;
  nets::Mat<float> f(points, cols);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = n(rng);
  return f;
}

} // namespace

static void BM_NavierStokesStep(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  pdegen::SpectralNS2D solver(n, pdegen::NSParams{});
  pdegen::GRFSpec grf;
  const auto w0 = pdegen::sample_initial_vorticity(GridSpec{n, 2}, grf).values;
  solver.set_state(std::vector<double>(w0.begin(), w0.end()));
  for (auto _ : state) solver.step();
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_NavierStokesStep)->Arg(32)->Arg(64)->Arg(128);

static void BM_EncoderForward(benchmark::State& state) {
  const auto model = nets::init_model<float>(desk_model(), 0);
  const auto fields = random_fields(32 * 32, state.range(0), 1);
  for (auto _ : state) benchmark::DoNotOptimize(model.encoder.forward(fields));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderForward)->Arg(1)->Arg(32);

static void BM_DecoderForward(benchmark::State& state) {
  const auto model = nets::init_model<float>(desk_model(), 0);
  const int m = static_cast<int>(state.range(0));
  const Eigen::MatrixXd coords = nets::grid_coordinates(2, m);
  const nets::Vec<float> z = nets::Vec<float>::Constant(10, 0.3f);
  for (auto _ : state) benchmark::DoNotOptimize(model.decoder.decode_points(z, coords));
  state.SetItemsProcessed(state.iterations() * m * m);
}
BENCHMARK(BM_DecoderForward)->Arg(32)->Arg(128);

static void BM_LatentRollout(benchmark::State& state) {
  auto model = nets::init_model<float>(desk_model(), 0);
  LatentTrajectory t;
  t.states = Eigen::MatrixXd::Random(10, 30);
  std::vector<const LatentTrajectory*> batch(8, &t);
  std::vector<float> grad(model.odefunc.params().size());
  const bool with_grad = state.range(0) != 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(train::stage2_batch_loss(model.odefunc, batch, 4, with_grad ? &grad : nullptr));
  }
}
BENCHMARK(BM_LatentRollout)->Arg(0)->Arg(1)->ArgName("grad");

static void BM_StageOneIteration(benchmark::State& state) {
  const auto model = nets::init_model<float>(desk_model(), 0);
  losses::SegmentBatch<float> batch;
  batch.fields = random_fields(32 * 32, 4 * 8, 2);
  std::mt19937_64 rng(3);
  batch.coords = nets::grid_coordinates(2, 32);
  train::subsample_points(batch, 256, rng);
  nets::ModelGrads<float> g(model);
  for (auto _ : state) benchmark::DoNotOptimize(losses::stage1_loss(model, batch, 0.1, &g));
}
BENCHMARK(BM_StageOneIteration)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
