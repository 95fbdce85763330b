// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "jerkrom/datastore.hpp"
#include "jerkrom/field.hpp"

namespace jerkrom::pdegen {

/// Forced 2D vorticity equation parameters. The forcing is
/// amplitude * (sin(2pi(x1+x2)) + cos(2pi(x1+x2))).
struct NSParams {
  double viscosity = 1e-3;
  double forcing_amplitude = 0.1;
  double sim_dt = 1e-2;      ///< inner solver step
  double snapshot_dt = 1.0;  ///< interval between stored snapshots
  int snapshots = 50;

  void validate() const;
  /// Number of solver steps between consecutive snapshots.
  int substeps() const;
};

/// Gaussian random field N(0, scale * (-Lap + tau^2 I)^(-alpha)) on the
/// periodic unit square.
struct GRFSpec {
  double alpha = 2.5;
  double tau = 7.0;
  double scale = 18.520259177452136;  // 7^(3/2)
  std::uint64_t seed = 0;

  /// Eigenvalue of the covariance operator for integer wavevector (k1, k2).
  double eigenvalue(int k1, int k2) const;
};

/// Draws one field whose Fourier coefficients c_k (field = sum_k c_k e^{2 pi i k.x})
/// are independent Gaussians with E|c_k|^2 = eigenvalue(k), Hermitian-paired so
/// the field is real.
FieldSnapshot sample_initial_vorticity(const GridSpec& grid, const GRFSpec& spec);

/// Pseudo-spectral solver: Crank-Nicolson on the viscous term, Heun on
/// advection + forcing, 2/3-rule dealiasing applied to the nonlinear term and
/// to the state after every step. Owns its FFT plans and work buffers.
class SpectralNS2D {
public:
  SpectralNS2D(int nx, NSParams params);
  ~SpectralNS2D();
  SpectralNS2D(const SpectralNS2D&) = delete;
  SpectralNS2D& operator=(const SpectralNS2D&) = delete;

  /// Loads a physical-space vorticity field (nx*nx values).
  void set_state(const std::vector<double>& w);
  std::vector<double> state() const;
  /// Half-spectrum of the state, nx x (nx/2+1), unnormalised forward FFT.
  const std::vector<std::complex<double>>& spectrum() const { return what_; }

  /// Advances one solver step of size params.sim_dt.
  void step();

  int nx() const { return n_; }
  int dealias_cutoff() const { return kmax_; }
  /// True if mode (row i, column j) of the half-spectrum survives dealiasing.
  bool retained(int i, int j) const;

private:
  struct Impl;
  void explicit_rhs(const std::vector<std::complex<double>>& wh,
                    std::vector<std::complex<double>>& out);

  int n_;
  int kmax_;
  NSParams params_;
  std::vector<std::complex<double>> what_;
  std::vector<std::complex<double>> forcing_hat_;
  Impl* impl_;
};

/// Integrates from w0 and returns snapshots at t = 0, dt, ..., (snapshots-1)*dt.
/// Throws SolverBlowupError naming the failing step on non-finite values.
Trajectory simulate_ns(const FieldSnapshot& w0, const NSParams& params, const GridSpec& grid);

/// Closed-form 1D advection-diffusion waves A exp(-nu k^2 t) sin(k(x - c t) + phi).
struct ToyWaveParams {
  double wavenumber = 6.283185307179586;  // 2 pi
  double speed = 0.05;
  double viscosity = 0.01;
  double amplitude_min = 0.5;
  double amplitude_max = 1.5;
  double dt = 1.0;
  int snapshots = 20;
};

/// Exact wave value at (x, t) for amplitude a and phase phi.
double toy_wave_value(const ToyWaveParams& p, double a, double phi, double x, double t);

struct ToyWaveTrajectory {
  Trajectory trajectory;
  double amplitude;
  double phase;
};

std::vector<ToyWaveTrajectory> generate_toy_wave(const GridSpec& grid, int n_traj,
                                                 std::uint64_t seed,
                                                 const ToyWaveParams& params = {});

/// Full Navier-Stokes corpus settings. With oversample > 1 each trajectory is
/// simulated at nx*oversample and decimated by point subsampling.
struct CorpusSpec {
  GridSpec grid{32, 2};
  NSParams ns;
  int n_trajectories = 80;
  int oversample = 1;
  std::uint64_t seed = 0;
  int workers = 0;  ///< 0: hardware concurrency
};

std::vector<Trajectory> generate_ns_corpus(const CorpusSpec& spec);

/// Drops the burn-in prefix, records windows and the train/test split, and
/// computes normalisation statistics from the training portion only.
DatasetBundle build_dataset(std::vector<Trajectory> trajectories, const GridSpec& grid,
                            const SplitSpec& split);

} // namespace jerkrom::pdegen
