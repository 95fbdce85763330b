// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "jerkrom/datastore.hpp"
#include "jerkrom/integrate.hpp"
#include "jerkrom/nets.hpp"

namespace jerkrom::infer {

using ode::IntegratorSpec;

/// Integrates the latent field from z0 at t=0; column i is z(times[i]).
/// `dt` is the data spacing that fixes the default RK4 substep. The float
/// model is evaluated in double precision.
Eigen::MatrixXd integrate_latent(const nets::OdeFunc<float>& f, const Eigen::VectorXd& z0,
                                 const std::vector<double>& times, const IntegratorSpec& spec, double dt);

/// Spatial query points (ndim x M, wrapped into the periodic cell) and query
/// times measured from the initial snapshot.
struct QuerySpec {
  Eigen::MatrixXd coords;
  std::vector<double> times{0.0};

  /// Uniform m-per-axis grid.
  static QuerySpec on_grid(int ndim, int m, std::vector<double> times);
  void validate(int ndim) const;
};

struct Forecast {
  std::vector<double> times;
  Eigen::MatrixXd latents;                ///< d_z x times
  std::vector<std::vector<float>> fields; ///< physical units, one per time
};

/// Encodes the physical snapshot `u0`, integrates to every query time and
/// decodes at every query point.
Forecast predict(const nets::ModelState<float>& model, const Normalization& norm, std::span<const float> u0,
                 const QuerySpec& query, const IntegratorSpec& spec, double dt);

/// ||pred - truth|| / ||truth||; MetricError when ||truth|| = 0.
double relative_rmse(std::span<const float> pred, std::span<const float> truth);

/// Mean over all L-3 windows of ||third difference||^2 / d_z for a d_z x L
/// trajectory. ConfigError when L < 4.
double average_jerk(const Eigen::MatrixXd& states);

struct ActiveCoords {
  int count = 0;
  double threshold = 0.0;
  std::vector<double> variances;  ///< population variance per coordinate
};

/// Pools every state of every trajectory; coordinates whose variance is at
/// least `threshold` count as active.
ActiveCoords count_active_coords(const std::vector<Eigen::MatrixXd>& trajectories, double threshold);

/// Default activity threshold for latent dimension d_z.
double default_active_threshold(int dz);

struct EvalOptions {
  IntegratorSpec integrator;
  double active_threshold = 0.0;  ///< <= 0 selects default_active_threshold(d_z)
  bool oracle = false;            ///< feed ground truth as the forecast (harness self-test)
};

struct EvalReport {
  std::vector<int> test_ids;
  std::vector<double> times;  ///< offsets from the first training-window snapshot
  int train_steps = 0;
  int extrap_steps = 0;
  std::vector<std::vector<double>> rmse;  ///< [test trajectory][time]
  std::vector<double> rmse_mean;          ///< per time, averaged over test trajectories
  double interp_rmse = 0.0;
  double extrap_rmse = 0.0;
  double interp_mse = 0.0;  ///< physical units, mean over points and snapshots
  double extrap_mse = 0.0;
  std::vector<double> avg_jerk;  ///< per encoded test trajectory (training window)
  double avg_jerk_mean = 0.0;
  int active_coords = 0;
  double active_threshold = 0.0;
  std::vector<double> latent_variances;
  double test_recon_mse = 0.0;  ///< normalised units, training window

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  /// time,window,mean_rmse,<one column per test trajectory>
  std::string curves_csv() const;
};

/// Physical-unit forecast of trajectory `id` at every offset in `times`.
using Forecaster = std::function<std::vector<std::vector<float>>(int id, const std::vector<double>& times)>;

/// Error curves of `forecast` against the test split over the training and
/// extrapolation windows. Latent fields of the report are left empty.
EvalReport evaluate_forecasts(const DatasetBundle& bundle, const Forecaster& forecast);

/// Rolls every test trajectory out from its first training-window snapshot and
/// adds latent metrics of the encoded test trajectories.
EvalReport evaluate_rollout(const nets::ModelState<float>& model, const DatasetBundle& bundle,
                            const EvalOptions& opts = {});

} // namespace jerkrom::infer
