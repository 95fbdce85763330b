// SPDX-License-Identifier: Apache-2.0
#include "jerkrom/infer.hpp"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "jerkrom/error.hpp"
#include "jerkrom/train.hpp"

namespace jerkrom::infer {

using json = nlohmann::json;

Eigen::MatrixXd integrate_latent(const nets::OdeFunc<float>& f, const Eigen::VectorXd& z0,
                                 const std::vector<double>& times, const IntegratorSpec& spec, double dt) {
  if (z0.size() != f.config().latent_dim) {
    throw ShapeError("latent dimension mismatch: z0 has " + std::to_string(z0.size()) +
                     " entries, ODE function expects " + std::to_string(f.config().latent_dim));
  }
  const nets::OdeFunc<double> fd = f.cast<double>();
  IntegratorSpec s = spec;
  if (s.max_substep <= 0.0) s.max_substep = s.substep_for(dt);
  const ode::Rhs rhs = [&fd](const Eigen::VectorXd& z, Eigen::VectorXd& dz) { dz = fd.forward(z).col(0); };
  return ode::integrate(rhs, z0, 0.0, times, s);
}

QuerySpec QuerySpec::on_grid(int ndim, int m, std::vector<double> times) {
  if (m < 1) throw ConfigError("query resolution must be >= 1", "res");
  return QuerySpec{nets::grid_coordinates(ndim, m), std::move(times)};
}

void QuerySpec::validate(int ndim) const {
  if (coords.rows() != ndim) {
    throw ShapeError("query coordinates are " + std::to_string(coords.rows()) + "-D, model is " +
                     std::to_string(ndim) + "-D");
  }
  if (!coords.allFinite()) throw ConfigError("query coordinates must be finite", "queries");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] >= 0.0) || !std::isfinite(times[i])) {
      throw ConfigError("query times must be finite and >= 0", "times");
    }
    if (i > 0 && times[i] < times[i - 1]) throw ConfigError("query times must be sorted", "times");
  }
}

Forecast predict(const nets::ModelState<float>& model, const Normalization& norm, std::span<const float> u0,
                 const QuerySpec& query, const IntegratorSpec& spec, double dt) {
  query.validate(model.config.decoder.ndim);
  const std::vector<float> x = store::normalize(u0, norm);
  const nets::Vec<float> z0 = nets::encode(model, x);
  Forecast out;
  out.times = query.times;
  out.latents = integrate_latent(model.odefunc, z0.cast<double>(), query.times, spec, dt);
  for (Eigen::Index i = 0; i < out.latents.cols(); ++i) {
    const nets::Vec<float> z = out.latents.col(i).cast<float>();
    std::vector<float> u = model.decoder.decode_points(z, query.coords);
    store::denormalize_inplace(u, norm);
    out.fields.push_back(std::move(u));
  }
  return out;
}

double relative_rmse(std::span<const float> pred, std::span<const float> truth) {
  if (pred.size() != truth.size()) {
    throw ShapeError("prediction has " + std::to_string(pred.size()) + " values, truth has " +
                     std::to_string(truth.size()));
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - truth[i];
    num += d * d;
    den += static_cast<double>(truth[i]) * truth[i];
  }
  if (den == 0.0) throw MetricError("relative RMSE is undefined for a zero-norm reference field");
  return std::sqrt(num / den);
}

double average_jerk(const Eigen::MatrixXd& states) {
  if (states.cols() < 4) {
    throw ConfigError("average jerk needs at least 4 states, got " + std::to_string(states.cols()),
                      "latents");
  }
  double sum = 0.0;
  for (Eigen::Index t = 0; t + 3 < states.cols(); ++t) {
    sum += (states.col(t + 3) - 3.0 * states.col(t + 2) + 3.0 * states.col(t + 1) - states.col(t)).squaredNorm();
  }
  return sum / static_cast<double>(states.rows()) / static_cast<double>(states.cols() - 3);
}

ActiveCoords count_active_coords(const std::vector<Eigen::MatrixXd>& trajectories, double threshold) {
  if (!(threshold > 0.0)) throw ConfigError("activity threshold must be > 0", "eval.active_threshold");
  if (trajectories.empty()) throw ConfigError("cannot count active coordinates of an empty dataset", "latents");
  const Eigen::Index dz = trajectories.front().rows();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dz);
  double n = 0.0;
  for (const auto& t : trajectories) {
    if (t.rows() != dz) throw ShapeError("latent trajectories disagree on d_z");
    sum += t.rowwise().sum();
    n += static_cast<double>(t.cols());
  }
  if (n == 0.0) throw ConfigError("cannot count active coordinates of an empty dataset", "latents");
  const Eigen::VectorXd mean = sum / n;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(dz);
  for (const auto& t : trajectories) var += (t.colwise() - mean).array().square().rowwise().sum().matrix();
  var /= n;
  ActiveCoords out;
  out.threshold = threshold;
  out.variances.assign(var.data(), var.data() + dz);
  for (double v : out.variances) out.count += v >= threshold ? 1 : 0;
  return out;
}

double default_active_threshold(int dz) {
  switch (dz) {
    case 8: return 1e-4;
    case 10: return 5e-5;
    case 16: return 1e-4;
    case 32: return 1e-5;
    case 64: return 1e-5;
    default: return 1e-4;
  }
}

// --- report -------------------------------------------------------------------------

std::string EvalReport::to_json() const {
  json j{{"test_ids", test_ids},
         {"times", times},
         {"train_steps", train_steps},
         {"extrap_steps", extrap_steps},
         {"rmse", rmse},
         {"rmse_mean", rmse_mean},
         {"interp_rmse", interp_rmse},
         {"extrap_rmse", extrap_rmse},
         {"interp_mse", interp_mse},
         {"extrap_mse", extrap_mse},
         {"avg_jerk", avg_jerk},
         {"avg_jerk_mean", avg_jerk_mean},
         {"active_coords", active_coords},
         {"active_threshold", active_threshold},
         {"latent_variances", latent_variances},
         {"test_recon_mse", test_recon_mse}};
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  EvalReport r;
  try {
    const json j = json::parse(text);
    r.test_ids = j.at("test_ids").get<std::vector<int>>();
    r.times = j.at("times").get<std::vector<double>>();
    r.train_steps = j.at("train_steps").get<int>();
    r.extrap_steps = j.at("extrap_steps").get<int>();
    r.rmse = j.at("rmse").get<std::vector<std::vector<double>>>();
    r.rmse_mean = j.at("rmse_mean").get<std::vector<double>>();
    r.interp_rmse = j.at("interp_rmse").get<double>();
    r.extrap_rmse = j.at("extrap_rmse").get<double>();
    r.interp_mse = j.at("interp_mse").get<double>();
    r.extrap_mse = j.at("extrap_mse").get<double>();
    r.avg_jerk = j.at("avg_jerk").get<std::vector<double>>();
    r.avg_jerk_mean = j.at("avg_jerk_mean").get<double>();
    r.active_coords = j.at("active_coords").get<int>();
    r.active_threshold = j.at("active_threshold").get<double>();
    r.latent_variances = j.at("latent_variances").get<std::vector<double>>();
    r.test_recon_mse = j.at("test_recon_mse").get<double>();
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

std::string EvalReport::curves_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "time,window,mean_rmse";
  for (int id : test_ids) os << ",traj" << id;
  os << '\n';
  for (std::size_t t = 0; t < times.size(); ++t) {
    os << times[t] << ',' << (static_cast<int>(t) < train_steps ? "train" : "extrap") << ',' << rmse_mean[t];
    for (const auto& row : rmse) os << ',' << row[t];
    os << '\n';
  }
  return os.str();
}

EvalReport evaluate_forecasts(const DatasetBundle& bundle, const Forecaster& forecast) {
  const Splits& sp = bundle.splits;
  if (sp.test_ids.empty()) throw ConfigError("evaluation needs a nonempty test split", "data.n_test");
  EvalReport r;
  r.test_ids = sp.test_ids;
  r.train_steps = sp.train_window.length();
  r.extrap_steps = sp.extrap_window.length();
  const int T = r.train_steps + r.extrap_steps;
  for (int t = 0; t < T; ++t) r.times.push_back(t * bundle.dt);
  r.rmse_mean.assign(static_cast<std::size_t>(T), 0.0);
  double sq_in = 0.0, sq_ex = 0.0, n_in = 0.0, n_ex = 0.0, rm_in = 0.0, rm_ex = 0.0;
  for (int id : sp.test_ids) {
    const Trajectory& traj = bundle.trajectories.at(static_cast<std::size_t>(id));
    const std::vector<std::vector<float>> pred = forecast(id, r.times);
    if (pred.size() != static_cast<std::size_t>(T)) throw ShapeError("forecast returned the wrong number of times");
    std::vector<double> row(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      const auto& truth = traj.snapshots.at(static_cast<std::size_t>(sp.train_window.begin + t)).values;
      const auto& p = pred[static_cast<std::size_t>(t)];
      row[static_cast<std::size_t>(t)] = relative_rmse(p, truth);
      double sq = 0.0;
      for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = static_cast<double>(p[i]) - truth[i];
        sq += d * d;
      }
      const double mse = sq / static_cast<double>(truth.size());
      if (t < r.train_steps) {
        sq_in += mse;
        rm_in += row[static_cast<std::size_t>(t)];
        n_in += 1.0;
      } else {
        sq_ex += mse;
        rm_ex += row[static_cast<std::size_t>(t)];
        n_ex += 1.0;
      }
      r.rmse_mean[static_cast<std::size_t>(t)] += row[static_cast<std::size_t>(t)];
    }
    r.rmse.push_back(std::move(row));
  }
  for (double& v : r.rmse_mean) v /= static_cast<double>(sp.test_ids.size());
  r.interp_rmse = n_in > 0 ? rm_in / n_in : 0.0;
  r.interp_mse = n_in > 0 ? sq_in / n_in : 0.0;
  r.extrap_rmse = n_ex > 0 ? rm_ex / n_ex : 0.0;
  r.extrap_mse = n_ex > 0 ? sq_ex / n_ex : 0.0;
  return r;
}

EvalReport evaluate_rollout(const nets::ModelState<float>& model, const DatasetBundle& bundle,
                            const EvalOptions& opts) {
  const TimeWindow w = bundle.splits.train_window;
  Forecaster f;
  if (opts.oracle) {
    f = [&](int id, const std::vector<double>& times) {
      std::vector<std::vector<float>> out;
      const Trajectory& traj = bundle.trajectories.at(static_cast<std::size_t>(id));
      for (std::size_t t = 0; t < times.size(); ++t) out.push_back(traj.snapshots.at(w.begin + t).values);
      return out;
    };
  } else {
    // The forecaster outlives this block, so it owns its query grid.
    f = [&, q = QuerySpec{nets::grid_coordinates(bundle.grid.ndim, bundle.grid.nx), {}}](
            int id, const std::vector<double>& times) {
      QuerySpec qt = q;
      qt.times = times;
      const auto& u0 = bundle.trajectories.at(static_cast<std::size_t>(id)).snapshots.at(w.begin).values;
      return predict(model, bundle.norm, u0, qt, opts.integrator, bundle.dt).fields;
    };
  }
  EvalReport r = evaluate_forecasts(bundle, f);

  const LatentDataset latents = train::encode_dataset(model, bundle, false);
  std::vector<Eigen::MatrixXd> test_latents;
  for (int id : bundle.splits.test_ids) {
    const Eigen::MatrixXd& s = latents.trajectories.at(static_cast<std::size_t>(id)).states;
    test_latents.push_back(s);
    r.avg_jerk.push_back(s.cols() >= 4 ? average_jerk(s) : 0.0);
  }
  double sum = 0.0;
  for (double v : r.avg_jerk) sum += v;
  r.avg_jerk_mean = r.avg_jerk.empty() ? 0.0 : sum / static_cast<double>(r.avg_jerk.size());
  const double thr = opts.active_threshold > 0.0 ? opts.active_threshold
                                                 : default_active_threshold(model.config.latent_dim());
  const ActiveCoords ac = count_active_coords(test_latents, thr);
  r.active_coords = ac.count;
  r.active_threshold = ac.threshold;
  r.latent_variances = ac.variances;
  r.test_recon_mse = train::evaluate_stage1(model, bundle, bundle.splits.test_ids).recon_mse;
  return r;
}

} // namespace jerkrom::infer
