// SPDX-License-Identifier: Apache-2.0
#include "jerkrom/pdegen.hpp"

#include <fftw3.h>

#include <atomic>
#include <cmath>
#include <mutex>
#include <numbers>
#include <random>
#include <string>
#include <thread>

#include "jerkrom/error.hpp"

namespace jerkrom::pdegen {

namespace {

using cplx = std::complex<double>;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// FFTW's planner is not thread-safe.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

int signed_freq(int i, int n) { return i <= n / 2 ? i : i - n; }

struct HalfSpectrumFft {
  int n;
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;

  explicit HalfSpectrumFft(int n_) : n(n_) {
    const std::size_t nr = static_cast<std::size_t>(n) * n;
    const std::size_t nc = static_cast<std::size_t>(n) * (n / 2 + 1);
    real = fftw_alloc_real(nr);
    spec = fftw_alloc_complex(nc);
    // FFTW_ESTIMATE keeps plan selection (and therefore rounding) reproducible.
    std::lock_guard lock(planner_mutex());
    forward = fftw_plan_dft_r2c_2d(n, n, real, spec, FFTW_ESTIMATE);
    backward = fftw_plan_dft_c2r_2d(n, n, spec, real, FFTW_ESTIMATE);
  }
  ~HalfSpectrumFft() {
    {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(forward);
      fftw_destroy_plan(backward);
    }
    fftw_free(real);
    fftw_free(spec);
  }
  HalfSpectrumFft(const HalfSpectrumFft&) = delete;
  HalfSpectrumFft& operator=(const HalfSpectrumFft&) = delete;

  std::size_t half() const { return static_cast<std::size_t>(n) * (n / 2 + 1); }

  // Unnormalised forward transform of `in` (n*n reals) into `out`.
  void r2c(const double* in, cplx* out) {
    std::copy(in, in + static_cast<std::size_t>(n) * n, real);
    fftw_execute(forward);
    std::copy(reinterpret_cast<cplx*>(spec), reinterpret_cast<cplx*>(spec) + half(), out);
  }
  // Unnormalised inverse transform; the caller applies 1/n^2.
  void c2r(const cplx* in, double* out) {
    std::copy(in, in + half(), reinterpret_cast<cplx*>(spec));
    fftw_execute(backward);
    std::copy(real, real + static_cast<std::size_t>(n) * n, out);
  }
};

} // namespace

void NSParams::validate() const {
  if (!(viscosity > 0.0)) throw ConfigError("viscosity must be positive", "data.viscosity");
  if (!(sim_dt > 0.0)) throw ConfigError("sim time step must be positive", "data.sim_dt");
  if (!(snapshot_dt > 0.0)) throw ConfigError("snapshot interval must be positive", "data.dt");
  if (sim_dt > snapshot_dt) {
    throw ConfigError("sim time step must not exceed the snapshot interval", "data.sim_dt");
  }
  const double ratio = snapshot_dt / sim_dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio) {
    throw ConfigError("snapshot interval must be an integer multiple of the sim time step",
                      "data.sim_dt");
  }
  if (snapshots < 1) throw ConfigError("snapshots must be >= 1", "data.snapshots");
}

int NSParams::substeps() const { return static_cast<int>(std::lround(snapshot_dt / sim_dt)); }

double GRFSpec::eigenvalue(int k1, int k2) const {
  const double k2sum = static_cast<double>(k1) * k1 + static_cast<double>(k2) * k2;
  return scale * std::pow(4.0 * std::numbers::pi * std::numbers::pi * k2sum + tau * tau, -alpha);
}

FieldSnapshot sample_initial_vorticity(const GridSpec& grid, const GRFSpec& spec) {
  grid.validate();
  if (grid.ndim != 2) throw ConfigError("GRF sampler requires a 2D grid", "data.ndim");
  const int n = grid.nx;
  const int nh = n / 2 + 1;
  std::vector<cplx> coeffs(static_cast<std::size_t>(n) * nh);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto at = [&](int i, int j) -> cplx& { return coeffs[static_cast<std::size_t>(i) * nh + j]; };
  for (int j = 0; j < nh; ++j) {
    const bool self_paired_column = (j == 0 || j == n / 2);
    for (int i = 0; i < n; ++i) {
      const double lam = spec.eigenvalue(signed_freq(i, n), j);
      if (!self_paired_column) {
        const double s = std::sqrt(lam / 2.0);
        const double a = normal(rng);
        const double b = normal(rng);
        at(i, j) = cplx(s * a, s * b);
        continue;
      }
      const int partner = (n - i) % n;
      if (partner == i) {
        at(i, j) = cplx(std::sqrt(lam) * normal(rng), 0.0);
      } else if (i < partner) {
        const double s = std::sqrt(lam / 2.0);
        const double a = normal(rng);
        const double b = normal(rng);
        at(i, j) = cplx(s * a, s * b);
        at(partner, j) = std::conj(at(i, j));
      }
    }
  }

  HalfSpectrumFft fft(n);
  std::vector<double> w(static_cast<std::size_t>(n) * n);
  fft.c2r(coeffs.data(), w.data());
  FieldSnapshot out;
  out.values.assign(w.begin(), w.end());
  out.time = 0.0;
  return out;
}

struct SpectralNS2D::Impl {
  explicit Impl(int n) : fft(n) {}
  HalfSpectrumFft fft;
  std::vector<double> k1, k2, kk;  // per half-spectrum entry: 2pi k1, 2pi k2, 4pi^2|k|^2
  std::vector<char> mask;
  std::vector<cplx> tmp_a, tmp_b;
  std::vector<double> u1, u2, w1, w2;
};

SpectralNS2D::SpectralNS2D(int nx, NSParams params)
    : n_(nx), kmax_(nx / 3), params_(params), impl_(new Impl(nx)) {
  GridSpec{nx, 2}.validate();
  params_.validate();
  const int nh = n_ / 2 + 1;
  const std::size_t half = static_cast<std::size_t>(n_) * nh;
  const std::size_t full = static_cast<std::size_t>(n_) * n_;
  impl_->k1.resize(half);
  impl_->k2.resize(half);
  impl_->kk.resize(half);
  impl_->mask.resize(half);
  for (int i = 0; i < n_; ++i) {
    for (int j = 0; j < nh; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * nh + j;
      const int f1 = signed_freq(i, n_);
      impl_->k1[idx] = kTwoPi * f1;
      impl_->k2[idx] = kTwoPi * j;
      impl_->kk[idx] = impl_->k1[idx] * impl_->k1[idx] + impl_->k2[idx] * impl_->k2[idx];
      impl_->mask[idx] = (std::abs(f1) <= kmax_ && j <= kmax_) ? 1 : 0;
    }
  }
  impl_->tmp_a.resize(half);
  impl_->tmp_b.resize(half);
  impl_->u1.resize(full);
  impl_->u2.resize(full);
  impl_->w1.resize(full);
  impl_->w2.resize(full);
  what_.assign(half, cplx(0.0, 0.0));

  std::vector<double> f(full);
  for (int i0 = 0; i0 < n_; ++i0) {
    for (int i1 = 0; i1 < n_; ++i1) {
      const double s = kTwoPi * (static_cast<double>(i0) / n_ + static_cast<double>(i1) / n_);
      f[static_cast<std::size_t>(i0) * n_ + i1] =
          params_.forcing_amplitude * (std::sin(s) + std::cos(s));
    }
  }
  forcing_hat_.resize(half);
  impl_->fft.r2c(f.data(), forcing_hat_.data());
  for (std::size_t idx = 0; idx < half; ++idx) {
    if (!impl_->mask[idx]) forcing_hat_[idx] = 0.0;
  }
}

SpectralNS2D::~SpectralNS2D() { delete impl_; }

bool SpectralNS2D::retained(int i, int j) const {
  return impl_->mask[static_cast<std::size_t>(i) * (n_ / 2 + 1) + j] != 0;
}

void SpectralNS2D::set_state(const std::vector<double>& w) {
  if (w.size() != static_cast<std::size_t>(n_) * n_) {
    throw ShapeError("vorticity field has " + std::to_string(w.size()) + " values, expected " +
                     std::to_string(n_ * n_));
  }
  impl_->fft.r2c(w.data(), what_.data());
}

std::vector<double> SpectralNS2D::state() const {
  std::vector<double> w(static_cast<std::size_t>(n_) * n_);
  impl_->fft.c2r(what_.data(), w.data());
  const double inv = 1.0 / (static_cast<double>(n_) * n_);
  for (double& x : w) x *= inv;
  return w;
}

void SpectralNS2D::explicit_rhs(const std::vector<cplx>& wh, std::vector<cplx>& out) {
  Impl& m = *impl_;
  const std::size_t half = wh.size();
  const std::size_t full = static_cast<std::size_t>(n_) * n_;
  const cplx I(0.0, 1.0);

  // Velocity from the streamfunction (-Lap psi = w): u = (d psi/dx2, -d psi/dx1).
  for (std::size_t idx = 0; idx < half; ++idx) {
    const cplx psi = m.kk[idx] > 0.0 ? wh[idx] / m.kk[idx] : cplx(0.0);
    m.tmp_a[idx] = I * m.k2[idx] * psi;
    m.tmp_b[idx] = -I * m.k1[idx] * psi;
  }
  m.fft.c2r(m.tmp_a.data(), m.u1.data());
  m.fft.c2r(m.tmp_b.data(), m.u2.data());
  for (std::size_t idx = 0; idx < half; ++idx) {
    m.tmp_a[idx] = I * m.k1[idx] * wh[idx];
    m.tmp_b[idx] = I * m.k2[idx] * wh[idx];
  }
  m.fft.c2r(m.tmp_a.data(), m.w1.data());
  m.fft.c2r(m.tmp_b.data(), m.w2.data());

  const double inv2 = 1.0 / (static_cast<double>(full) * static_cast<double>(full));
  for (std::size_t p = 0; p < full; ++p) {
    m.u1[p] = (m.u1[p] * m.w1[p] + m.u2[p] * m.w2[p]) * inv2;
  }
  m.fft.r2c(m.u1.data(), out.data());
  for (std::size_t idx = 0; idx < half; ++idx) {
    out[idx] = m.mask[idx] ? forcing_hat_[idx] - out[idx] : cplx(0.0);
  }
}

void SpectralNS2D::step() {
  Impl& m = *impl_;
  const std::size_t half = what_.size();
  const double h = params_.sim_dt;
  std::vector<cplx> f0(half), f1(half), wstar(half);

  explicit_rhs(what_, f0);
  for (std::size_t idx = 0; idx < half; ++idx) {
    const double a = 0.5 * h * params_.viscosity * m.kk[idx];
    wstar[idx] = m.mask[idx] ? ((1.0 - a) * what_[idx] + h * f0[idx]) / (1.0 + a) : cplx(0.0);
  }
  explicit_rhs(wstar, f1);
  for (std::size_t idx = 0; idx < half; ++idx) {
    const double a = 0.5 * h * params_.viscosity * m.kk[idx];
    what_[idx] = m.mask[idx]
                     ? ((1.0 - a) * what_[idx] + 0.5 * h * (f0[idx] + f1[idx])) / (1.0 + a)
                     : cplx(0.0);
  }
}

Trajectory simulate_ns(const FieldSnapshot& w0, const NSParams& params, const GridSpec& grid) {
  grid.validate();
  if (grid.ndim != 2) throw ConfigError("Navier-Stokes solver requires a 2D grid", "data.ndim");
  params.validate();
  if (w0.values.size() != grid.points()) {
    throw ShapeError("initial field has " + std::to_string(w0.values.size()) +
                     " values, grid expects " + std::to_string(grid.points()));
  }
  for (float v : w0.values) {
    if (!std::isfinite(v)) throw ShapeError("initial vorticity contains non-finite values");
  }

  SpectralNS2D solver(grid.nx, params);
  solver.set_state(std::vector<double>(w0.values.begin(), w0.values.end()));

  Trajectory traj;
  traj.dt = params.snapshot_dt;
  traj.snapshots.reserve(static_cast<std::size_t>(params.snapshots));
  traj.snapshots.push_back(FieldSnapshot{w0.values, 0.0});

  const int sub = params.substeps();
  long step_index = 0;
  for (int s = 1; s < params.snapshots; ++s) {
    for (int k = 0; k < sub; ++k) {
      solver.step();
      ++step_index;
      for (const cplx& c : solver.spectrum()) {
        if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) {
          const double t_fail = step_index * params.sim_dt;
          throw SolverBlowupError("Navier-Stokes solver produced non-finite vorticity at step " +
                                      std::to_string(step_index) + " (t=" +
                                      std::to_string(t_fail) + ")",
                                  t_fail - params.sim_dt);
        }
      }
    }
    const std::vector<double> w = solver.state();
    FieldSnapshot snap;
    snap.values.assign(w.begin(), w.end());
    snap.time = s * params.snapshot_dt;
    traj.snapshots.push_back(std::move(snap));
  }
  return traj;
}

double toy_wave_value(const ToyWaveParams& p, double a, double phi, double x, double t) {
  return a * std::exp(-p.viscosity * p.wavenumber * p.wavenumber * t) *
         std::sin(p.wavenumber * (x - p.speed * t) + phi);
}

std::vector<ToyWaveTrajectory> generate_toy_wave(const GridSpec& grid, int n_traj,
                                                 std::uint64_t seed,
                                                 const ToyWaveParams& params) {
  grid.validate();
  if (grid.ndim != 1) throw ConfigError("toy wave generator requires a 1D grid", "data.ndim");
  if (n_traj < 0) throw ConfigError("n_traj must be non-negative", "data.n_trajectories");
  if (params.snapshots < 1) throw ConfigError("snapshots must be >= 1", "data.snapshots");

  std::vector<ToyWaveTrajectory> out;
  out.reserve(static_cast<std::size_t>(n_traj));
  for (int r = 0; r < n_traj; ++r) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    std::uniform_real_distribution<double> amp(params.amplitude_min, params.amplitude_max);
    std::uniform_real_distribution<double> phase(0.0, kTwoPi);
    ToyWaveTrajectory tw;
    tw.amplitude = amp(rng);
    tw.phase = phase(rng);
    tw.trajectory.dt = params.dt;
    for (int s = 0; s < params.snapshots; ++s) {
      const double t = s * params.dt;
      FieldSnapshot snap;
      snap.time = t;
      snap.values.resize(static_cast<std::size_t>(grid.nx));
      for (int i = 0; i < grid.nx; ++i) {
        snap.values[static_cast<std::size_t>(i)] =
            static_cast<float>(toy_wave_value(params, tw.amplitude, tw.phase, grid.coord(i), t));
      }
      tw.trajectory.snapshots.push_back(std::move(snap));
    }
    out.push_back(std::move(tw));
  }
  return out;
}

std::vector<Trajectory> generate_ns_corpus(const CorpusSpec& spec) {
  spec.grid.validate();
  spec.ns.validate();
  if (spec.oversample < 1 || (spec.oversample & (spec.oversample - 1)) != 0) {
    throw ConfigError("oversample must be a power of two >= 1", "data.oversample");
  }
  if (spec.n_trajectories < 0) throw ConfigError("trajectory count must be >= 0", "data.n_trajectories");

  const GridSpec sim_grid{spec.grid.nx * spec.oversample, 2};
  std::vector<Trajectory> out(static_cast<std::size_t>(spec.n_trajectories));

  auto produce = [&](int r) {
    GRFSpec grf;
    grf.seed = derive_seed(spec.seed, static_cast<std::uint64_t>(r));
    const FieldSnapshot w0 = sample_initial_vorticity(sim_grid, grf);
    Trajectory fine = simulate_ns(w0, spec.ns, sim_grid);
    if (spec.oversample == 1) {
      out[static_cast<std::size_t>(r)] = std::move(fine);
      return;
    }
    Trajectory coarse;
    coarse.dt = fine.dt;
    const int n = spec.grid.nx;
    const int os = spec.oversample;
    for (const FieldSnapshot& f : fine.snapshots) {
      FieldSnapshot c;
      c.time = f.time;
      c.values.resize(spec.grid.points());
      for (int i0 = 0; i0 < n; ++i0) {
        for (int i1 = 0; i1 < n; ++i1) {
          c.values[static_cast<std::size_t>(i0) * n + i1] =
              f.values[static_cast<std::size_t>(i0 * os) * sim_grid.nx + i1 * os];
        }
      }
      coarse.snapshots.push_back(std::move(c));
    }
    out[static_cast<std::size_t>(r)] = std::move(coarse);
  };

  int workers = spec.workers > 0 ? spec.workers
                                 : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min(workers, std::max(1, spec.n_trajectories));
  if (workers <= 1) {
    for (int r = 0; r < spec.n_trajectories; ++r) produce(r);
    return out;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int r = next++; r < spec.n_trajectories; r = next++) {
        try {
          produce(r);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

DatasetBundle build_dataset(std::vector<Trajectory> trajectories, const GridSpec& grid,
                            const SplitSpec& split) {
  grid.validate();
  const int n = static_cast<int>(trajectories.size());
  if (n == 0) throw ConfigError("cannot build a dataset from zero trajectories", "data.n_train");
  const std::size_t length = trajectories.front().size();
  const double dt = trajectories.front().dt;
  for (const Trajectory& t : trajectories) {
    if (t.size() != length) throw ConfigError("trajectories differ in length", "data.snapshots");
    if (t.dt != dt) throw ConfigError("trajectories differ in time step", "data.dt");
    check_trajectory(t, grid);
  }
  if (split.burn_in < 0 || split.extrap_steps < 0 || split.train_steps < 0) {
    throw ConfigError("window sizes must be non-negative", "data.burn_in");
  }
  const int remaining = static_cast<int>(length) - split.burn_in;
  const int train_steps = split.train_steps > 0 ? split.train_steps : remaining - split.extrap_steps;
  if (train_steps <= 0 || train_steps + split.extrap_steps > remaining) {
    throw ConfigError("time windows (burn_in=" + std::to_string(split.burn_in) + ", train=" +
                          std::to_string(train_steps) + ", extrapolate=" +
                          std::to_string(split.extrap_steps) + ") exceed trajectory length " +
                          std::to_string(length),
                      "data.train_steps");
  }
  const int n_test = split.n_test;
  const int n_train = split.n_train >= 0 ? split.n_train : n - n_test;
  if (n_test < 0 || n_train < 1 || n_train + n_test > n) {
    throw ConfigError("split " + std::to_string(n_train) + "/" + std::to_string(n_test) +
                          " does not fit " + std::to_string(n) + " trajectories",
                      "data.n_train");
  }

  DatasetBundle b;
  b.grid = grid;
  b.dt = dt;
  b.burn_in = split.burn_in;
  b.trajectories.reserve(trajectories.size());
  for (Trajectory& t : trajectories) {
    Trajectory cut;
    cut.dt = t.dt;
    cut.snapshots.assign(std::make_move_iterator(t.snapshots.begin() + split.burn_in),
                         std::make_move_iterator(t.snapshots.end()));
    b.trajectories.push_back(std::move(cut));
  }
  for (int i = 0; i < n_train; ++i) b.splits.train_ids.push_back(i);
  for (int i = n_train; i < n_train + n_test; ++i) b.splits.test_ids.push_back(i);
  b.splits.train_window = TimeWindow{0, train_steps};
  b.splits.extrap_window = TimeWindow{train_steps, train_steps + split.extrap_steps};
  b.norm = store::compute_normalization(b);
  if (!(b.norm.std > 0.0)) {
    throw ConfigError("training data has zero variance; normalisation undefined", "data");
  }
  return b;
}

} // namespace jerkrom::pdegen
