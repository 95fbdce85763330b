// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "jerkrom/error.hpp"
#include "jerkrom/pdegen.hpp"

using namespace jerkrom;
using namespace jerkrom::pdegen;

namespace {

constexpr double kPi = std::numbers::pi;

FieldSnapshot taylor_green(int n) {
  FieldSnapshot w;
  w.values.resize(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      w.values[static_cast<std::size_t>(i) * n + j] =
          static_cast<float>(std::sin(2 * kPi * i / n) * std::sin(2 * kPi * j / n));
    }
  }
  return w;
}

// Fourier coefficient c_k = N^-2 sum_x w(x) exp(-2 pi i k.x).
std::complex<double> coefficient(const std::vector<float>& w, int n, int k1, int k2) {
  std::complex<double> acc = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double ph = -2 * kPi * (static_cast<double>(k1) * i + static_cast<double>(k2) * j) / n;
      acc += static_cast<double>(w[static_cast<std::size_t>(i) * n + j]) * std::polar(1.0, ph);
    }
  }
  return acc / static_cast<double>(n * n);
}

} // namespace

TEST(GridSpec, Validation) {
  EXPECT_NO_THROW((GridSpec{32, 2}.validate()));
  EXPECT_NO_THROW((GridSpec{8, 1}.validate()));
  EXPECT_THROW((GridSpec{12, 2}.validate()), ConfigError);
  EXPECT_THROW((GridSpec{4, 2}.validate()), ConfigError);
  EXPECT_THROW((GridSpec{32, 3}.validate()), ConfigError);
  try {
    GridSpec{24, 2}.validate();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "data.nx");
  }
}

TEST(GridSpec, CoordinatesArePackedRowMajor) {
  const GridSpec g{8, 2};
  const auto c = g.coordinates();
  ASSERT_EQ(c.size(), 128u);
  EXPECT_DOUBLE_EQ(c[2 * 9], 1.0 / 8);      // point (1, 1)
  EXPECT_DOUBLE_EQ(c[2 * 9 + 1], 1.0 / 8);
  EXPECT_DOUBLE_EQ(c[2 * 3 + 1], 3.0 / 8);  // point (0, 3)
  EXPECT_DOUBLE_EQ(c[2 * 3], 0.0);
}

TEST(TaylorGreen, DecaysAtAnalyticRate) {
  NSParams p;
  p.viscosity = 1e-3;
  p.forcing_amplitude = 0.0;
  p.sim_dt = 1e-2;
  p.snapshot_dt = 1.0;
  p.snapshots = 2;
  const GridSpec g{64, 2};
  const FieldSnapshot w0 = taylor_green(64);
  const Trajectory tr = simulate_ns(w0, p, g);
  const double decay = std::exp(-8 * kPi * kPi * p.viscosity * 1.0);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < w0.values.size(); ++i) {
    const double expect = decay * w0.values[i];
    num += std::pow(tr.snapshots[1].values[i] - expect, 2);
    den += expect * expect;
  }
  EXPECT_LT(std::sqrt(num / den), 1e-3);
}

TEST(TaylorGreen, AdvectionVanishes) {
  // With negligible viscosity the field must stay put: the nonlinear term is exactly zero.
  NSParams p;
  p.viscosity = 1e-12;
  p.forcing_amplitude = 0.0;
  p.sim_dt = 1e-2;
  p.snapshots = 3;
  const FieldSnapshot w0 = taylor_green(32);
  const Trajectory tr = simulate_ns(w0, p, GridSpec{32, 2});
  for (std::size_t i = 0; i < w0.values.size(); ++i) EXPECT_NEAR(tr.snapshots[2].values[i], w0.values[i], 1e-6);
}

TEST(NavierStokes, FirstSnapshotIsInitialCondition) {
  GRFSpec grf;
  grf.seed = 11;
  const GridSpec g{16, 2};
  const FieldSnapshot w0 = sample_initial_vorticity(g, grf);
  NSParams p;
  p.snapshots = 3;
  const Trajectory tr = simulate_ns(w0, p, g);
  ASSERT_EQ(tr.size(), 3u);
  EXPECT_EQ(tr.snapshots[0].values, w0.values);
  EXPECT_DOUBLE_EQ(tr.snapshots[0].time, 0.0);
  EXPECT_DOUBLE_EQ(tr.snapshots[2].time, 2.0);
}

TEST(NavierStokes, StateStaysDealiased) {
  const GridSpec g{16, 2};
  GRFSpec grf;
  grf.seed = 2;
  const FieldSnapshot w0 = sample_initial_vorticity(g, grf);
  NSParams p;
  SpectralNS2D solver(16, p);
  solver.set_state(std::vector<double>(w0.values.begin(), w0.values.end()));
  for (int s = 0; s < 5; ++s) solver.step();
  const auto& spec = solver.spectrum();
  for (int i = 0; i < 16; ++i) {
    for (int j = 0; j <= 8; ++j) {
      if (!solver.retained(i, j)) EXPECT_EQ(std::abs(spec[static_cast<std::size_t>(i) * 9 + j]), 0.0);
    }
  }
}

TEST(NavierStokes, RejectsBadInputs) {
  NSParams p;
  FieldSnapshot w;
  w.values.assign(256, 0.0f);
  w.values[3] = NAN;
  EXPECT_THROW(simulate_ns(w, p, GridSpec{16, 2}), ShapeError);
  w.values.assign(100, 0.0f);
  EXPECT_THROW(simulate_ns(w, p, GridSpec{16, 2}), ShapeError);
  p.sim_dt = 0.3;
  EXPECT_THROW(p.validate(), ConfigError);
  p.sim_dt = -1;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(NavierStokes, UnstableStepReportsBlowup) {
  NSParams p;
  p.viscosity = 1e-6;
  p.sim_dt = 1.0;
  p.snapshot_dt = 1.0;
  p.snapshots = 200;
  const GridSpec g{16, 2};
  FieldSnapshot w = taylor_green(16);
  GRFSpec grf;
  grf.seed = 1;
  const FieldSnapshot noise = sample_initial_vorticity(g, grf);
  for (std::size_t i = 0; i < w.values.size(); ++i) w.values[i] = 50.0f * (w.values[i] + 20.0f * noise.values[i]);
  EXPECT_THROW(simulate_ns(w, p, g), SolverBlowupError);
}

TEST(GaussianRandomField, EigenvalueFormula) {
  const GRFSpec s;
  EXPECT_NEAR(s.eigenvalue(0, 0), std::pow(7.0, 1.5) * std::pow(49.0, -2.5), 1e-18);
  EXPECT_NEAR(s.eigenvalue(1, 2), std::pow(7.0, 1.5) * std::pow(4 * kPi * kPi * 5 + 49, -2.5), 1e-18);
}

TEST(GaussianRandomField, DeterministicInSeed) {
  GRFSpec a;
  a.seed = 42;
  const GridSpec g{32, 2};
  EXPECT_EQ(sample_initial_vorticity(g, a).values, sample_initial_vorticity(g, a).values);
  GRFSpec b = a;
  b.seed = 43;
  EXPECT_NE(sample_initial_vorticity(g, a).values, sample_initial_vorticity(g, b).values);
}

TEST(GaussianRandomField, LowModeVarianceMatchesSpectrum) {
  // Smaller sample than the acceptance check; the tolerance scales as ~1/sqrt(samples).
  const int n = 16, samples = 400;
  const GridSpec g{n, 2};
  std::vector<std::pair<int, int>> modes{{0, 0}, {1, 0}, {0, 1}, {1, 1}, {2, -1}, {0, 3}};
  std::vector<double> acc(modes.size(), 0.0);
  for (int s = 0; s < samples; ++s) {
    GRFSpec spec;
    spec.seed = derive_seed(7, static_cast<std::uint64_t>(s));
    const auto w = sample_initial_vorticity(g, spec).values;
    for (std::size_t m = 0; m < modes.size(); ++m) acc[m] += std::norm(coefficient(w, n, modes[m].first, modes[m].second));
  }
  const GRFSpec spec;
  for (std::size_t m = 0; m < modes.size(); ++m) {
    const double expect = spec.eigenvalue(modes[m].first, modes[m].second);
    const double tol = modes[m] == std::pair<int, int>{0, 0} ? 0.3 : 0.2;
    EXPECT_NEAR(acc[m] / samples / expect, 1.0, tol) << "mode " << modes[m].first << "," << modes[m].second;
  }
}

TEST(Corpus, ReproducibleAndWorkerIndependent) {
  CorpusSpec c;
  c.grid = GridSpec{16, 2};
  c.ns.snapshots = 3;
  c.n_trajectories = 3;
  c.seed = 9;
  c.workers = 1;
  const auto a = generate_ns_corpus(c);
  c.workers = 3;
  const auto b = generate_ns_corpus(c);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t s = 0; s < a[t].size(); ++s) EXPECT_EQ(a[t].snapshots[s].values, b[t].snapshots[s].values);
  }
  EXPECT_NE(a[0].snapshots[0].values, a[1].snapshots[0].values);
}

TEST(Corpus, OversampledTrajectoriesSubsample) {
  CorpusSpec c;
  c.grid = GridSpec{16, 2};
  c.ns.snapshots = 2;
  c.n_trajectories = 1;
  c.oversample = 2;
  const auto a = generate_ns_corpus(c);
  ASSERT_EQ(a[0].snapshots[0].values.size(), 256u);
  c.oversample = 3;
  EXPECT_THROW(generate_ns_corpus(c), ConfigError);
}

TEST(ToyWave, MatchesClosedForm) {
  ToyWaveParams p;
  p.snapshots = 5;
  const GridSpec g{16, 1};
  const auto trajs = generate_toy_wave(g, 2, 5, p);
  ASSERT_EQ(trajs.size(), 2u);
  for (const auto& t : trajs) {
    EXPECT_GE(t.amplitude, p.amplitude_min);
    EXPECT_LE(t.amplitude, p.amplitude_max);
    for (int s = 0; s < 5; ++s) {
      for (int i = 0; i < 16; ++i) {
        const double v = t.amplitude * std::exp(-p.viscosity * p.wavenumber * p.wavenumber * s) *
                         std::sin(p.wavenumber * (i / 16.0 - p.speed * s) + t.phase);
        EXPECT_NEAR(t.trajectory.snapshots[static_cast<std::size_t>(s)].values[static_cast<std::size_t>(i)], v, 1e-6);
      }
    }
  }
  EXPECT_THROW(generate_toy_wave(GridSpec{16, 2}, 1, 0, p), ConfigError);
}

TEST(BuildDataset, WindowsSplitsAndNormalisation) {
  const GridSpec g{8, 1};
  ToyWaveParams p;
  p.snapshots = 12;
  std::vector<Trajectory> trajs;
  for (auto& t : generate_toy_wave(g, 5, 1, p)) trajs.push_back(t.trajectory);
  const auto original = trajs;
  SplitSpec s;
  s.burn_in = 2;
  s.train_steps = 6;
  s.extrap_steps = 3;
  s.n_train = 3;
  s.n_test = 2;
  const DatasetBundle b = build_dataset(trajs, g, s);
  EXPECT_EQ(b.splits.train_ids, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(b.splits.test_ids, (std::vector<int>{3, 4}));
  EXPECT_EQ(b.splits.train_window, (TimeWindow{0, 6}));
  EXPECT_EQ(b.splits.extrap_window, (TimeWindow{6, 9}));
  ASSERT_EQ(b.trajectories[0].size(), 10u);
  EXPECT_EQ(b.trajectories[0].snapshots[0].values, original[0].snapshots[2].values);

  // Statistics come from training trajectories over the training window only.
  double sum = 0.0, sq = 0.0, n = 0.0;
  for (int id = 0; id < 3; ++id) {
    for (int t = 0; t < 6; ++t) {
      for (float v : original[static_cast<std::size_t>(id)].snapshots[static_cast<std::size_t>(t + 2)].values) {
        sum += v;
        sq += static_cast<double>(v) * v;
        n += 1;
      }
    }
  }
  const double mean = sum / n;
  EXPECT_NEAR(b.norm.mean, mean, 1e-12);
  EXPECT_NEAR(b.norm.std, std::sqrt(sq / n - mean * mean), 1e-9);
}

TEST(BuildDataset, RejectsImpossibleWindowsAndConstantData) {
  const GridSpec g{8, 1};
  ToyWaveParams p;
  p.snapshots = 6;
  std::vector<Trajectory> trajs;
  for (auto& t : generate_toy_wave(g, 2, 1, p)) trajs.push_back(t.trajectory);
  SplitSpec s;
  s.burn_in = 2;
  s.train_steps = 4;
  s.extrap_steps = 2;
  EXPECT_THROW(build_dataset(trajs, g, s), ConfigError);
  s.extrap_steps = 0;
  s.n_train = 2;
  s.n_test = 1;
  EXPECT_THROW(build_dataset(trajs, g, s), ConfigError);
  for (auto& t : trajs) {
    for (auto& snap : t.snapshots) std::fill(snap.values.begin(), snap.values.end(), 0.5f);
  }
  s.n_test = 0;
  EXPECT_THROW(build_dataset(trajs, g, s), ConfigError);
}
