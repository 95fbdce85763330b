// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "jerkrom/error.hpp"
#include "jerkrom/infer.hpp"
#include "jerkrom/train.hpp"
#include "testutil.hpp"

using namespace jerkrom;
using namespace jerkrom::infer;
using jerkrom::testing::tiny_config;
using jerkrom::testing::toy_dataset;

namespace {

nets::ModelState<float> model_2d(std::uint64_t seed = 0) {
  nets::ModelConfig c = tiny_config(16, 3, 2);
  return nets::init_model<float>(c, seed);
}

std::vector<float> smooth_field(int nx) {
  std::vector<float> v(static_cast<std::size_t>(nx * nx));
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < nx; ++j) {
      v[static_cast<std::size_t>(i * nx + j)] =
          static_cast<float>(std::sin(2.0 * std::numbers::pi * i / nx) + 0.5 * std::cos(4.0 * std::numbers::pi * j / nx));
    }
  }
  return v;
}

} // namespace

TEST(RelativeRmse, Examples) {
  const std::vector<float> t{1.0f, -2.0f, 3.0f};
  EXPECT_EQ(relative_rmse(t, t), 0.0);
  EXPECT_DOUBLE_EQ(relative_rmse(std::vector<float>(3, 0.0f), t), 1.0);
  EXPECT_DOUBLE_EQ(relative_rmse(std::vector<float>{2.0f, -4.0f, 6.0f}, t), 1.0);
}

TEST(RelativeRmse, Errors) {
  EXPECT_THROW(relative_rmse(std::vector<float>{1.0f}, std::vector<float>{0.0f}), MetricError);
  EXPECT_THROW(relative_rmse(std::vector<float>{1.0f, 2.0f}, std::vector<float>{1.0f}), ShapeError);
}

TEST(AverageJerk, CubicOverTwoWindowsIsThirtySix) {
  Eigen::MatrixXd z(1, 5);
  z << 0, 1, 8, 27, 64;
  EXPECT_NEAR(average_jerk(z), 36.0, 1e-9);
}

TEST(AverageJerk, ConstantAndQuadraticAreZero) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Constant(4, 9, 2.5);
  EXPECT_EQ(average_jerk(c), 0.0);
  Eigen::MatrixXd q(3, 12);
  for (int t = 0; t < 12; ++t) {
    for (int d = 0; d < 3; ++d) q(d, t) = 0.5 * d + (d - 1.0) * t + 0.25 * t * t;
  }
  EXPECT_LT(average_jerk(q), 1e-12);
}

TEST(AverageJerk, ShortTrajectoryIsConfigError) {
  EXPECT_THROW(average_jerk(Eigen::MatrixXd::Zero(2, 3)), ConfigError);
}

TEST(ActiveCoords, CountsVaryingCoordinates) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  std::vector<Eigen::MatrixXd> trajs;
  for (int k = 0; k < 4; ++k) {
    Eigen::MatrixXd z = Eigen::MatrixXd::Constant(8, 20, 0.3);
    for (int t = 0; t < 20; ++t) {
      z(1, t) = n(rng);
      z(4, t) = 0.1 * n(rng);
      z(6, t) = 0.02 * n(rng);
    }
    trajs.push_back(z);
  }
  for (double thr : {1e-6, 1e-5, 1e-4}) EXPECT_EQ(count_active_coords(trajs, thr).count, 3) << thr;
  const auto r = count_active_coords(trajs, 1e-5);
  ASSERT_EQ(r.variances.size(), 8u);
  EXPECT_EQ(r.variances[0], 0.0);
  EXPECT_NEAR(r.variances[1], 1.0, 0.2);
}

TEST(ActiveCoords, ConstantGivesZero) {
  const std::vector<Eigen::MatrixXd> trajs{Eigen::MatrixXd::Constant(5, 6, 1.0), Eigen::MatrixXd::Constant(5, 6, 1.0)};
  EXPECT_EQ(count_active_coords(trajs, 1e-5).count, 0);
}

TEST(ActiveCoords, PoolsAcrossTrajectories) {
  // Each trajectory is constant but they differ, so the pooled variance is positive.
  const std::vector<Eigen::MatrixXd> trajs{Eigen::MatrixXd::Constant(1, 4, -1.0), Eigen::MatrixXd::Constant(1, 4, 1.0)};
  const auto r = count_active_coords(trajs, 0.5);
  EXPECT_EQ(r.count, 1);
  EXPECT_DOUBLE_EQ(r.variances[0], 1.0);
}

TEST(ActiveCoords, InvariantToOrderingAndCoordinatePermutation) {
  std::mt19937_64 rng(2);
  std::vector<Eigen::MatrixXd> trajs;
  for (int k = 0; k < 5; ++k) {
    Eigen::MatrixXd z = Eigen::MatrixXd::Random(6, 10);
    z.row(2).setConstant(0.1 * k);
    z.row(5) *= 1e-4;
    trajs.push_back(z);
  }
  const auto base = count_active_coords(trajs, 1e-3);

  auto reordered = trajs;
  std::shuffle(reordered.begin(), reordered.end(), rng);
  const auto r1 = count_active_coords(reordered, 1e-3);
  EXPECT_EQ(r1.count, base.count);
  for (std::size_t d = 0; d < 6; ++d) EXPECT_NEAR(r1.variances[d], base.variances[d], 1e-14);

  const std::vector<int> perm{3, 0, 5, 1, 4, 2};
  std::vector<Eigen::MatrixXd> permuted;
  for (const auto& z : trajs) {
    Eigen::MatrixXd p(6, z.cols());
    for (int d = 0; d < 6; ++d) p.row(d) = z.row(perm[static_cast<std::size_t>(d)]);
    permuted.push_back(p);
  }
  const auto r2 = count_active_coords(permuted, 1e-3);
  EXPECT_EQ(r2.count, base.count);
  for (std::size_t d = 0; d < 6; ++d) {
    EXPECT_NEAR(r2.variances[d], base.variances[static_cast<std::size_t>(perm[d])], 1e-14);
  }
}

TEST(ActiveCoords, EmptyIsConfigError) {
  EXPECT_THROW(count_active_coords({}, 1e-5), ConfigError);
  EXPECT_THROW(count_active_coords({Eigen::MatrixXd::Zero(2, 3)}, 0.0), ConfigError);
}

TEST(ActiveCoords, DefaultThresholds) {
  EXPECT_EQ(default_active_threshold(8), 1e-4);
  EXPECT_EQ(default_active_threshold(10), 5e-5);
  EXPECT_EQ(default_active_threshold(32), 1e-5);
  EXPECT_EQ(default_active_threshold(7), 1e-4);
}

TEST(IntegrateLatent, FirstTimeReturnsInitialStateExactly) {
  auto m = model_2d();
  const Eigen::VectorXd z0 = Eigen::VectorXd::Random(3);
  const Eigen::MatrixXd z = integrate_latent(m.odefunc, z0, {0.0, 0.5, 1.7}, {}, 1.0);
  ASSERT_EQ(z.cols(), 3);
  EXPECT_TRUE(z.col(0) == z0);
  EXPECT_TRUE(z.allFinite());
}

TEST(IntegrateLatent, ZeroFieldIsStationary) {
  nets::ModelConfig c = tiny_config(16, 3, 2);
  c.odefunc.zero_init_output = true;
  const auto m = nets::init_model<float>(c, 0);
  const Eigen::VectorXd z0 = Eigen::VectorXd::Random(3);
  const Eigen::MatrixXd z = integrate_latent(m.odefunc, z0, {0.0, 2.0, 10.0}, {}, 1.0);
  for (int k = 0; k < 3; ++k) EXPECT_TRUE(z.col(k) == z0);
}

TEST(IntegrateLatent, ContinuityBetweenGridTimes) {
  const auto m = model_2d(3);
  const Eigen::VectorXd z0 = Eigen::VectorXd::Random(3);
  const double t = 24.0;
  const std::vector<double> deltas{1e-3, 1e-2, 1e-1};
  std::vector<double> times{t};
  for (double d : deltas) times.push_back(t + d);
  const Eigen::MatrixXd z = integrate_latent(m.odefunc, z0, times, {}, 1.0);
  std::vector<double> err;
  for (int k = 1; k <= 3; ++k) err.push_back((z.col(k) - z.col(0)).norm());
  // log-log slope of ||z(t + d) - z(t)|| against d
  const double slope = (std::log(err[2]) - std::log(err[0])) / (std::log(deltas[2]) - std::log(deltas[0]));
  EXPECT_NEAR(slope, 1.0, 0.1);
}

TEST(QuerySpecTest, ValidatesTimesAndCoordinates) {
  QuerySpec q = QuerySpec::on_grid(2, 4, {0.0, 1.0});
  EXPECT_EQ(q.coords.cols(), 16);
  EXPECT_NO_THROW(q.validate(2));
  EXPECT_THROW(q.validate(1), ShapeError);
  q.times = {1.0, 0.5};
  EXPECT_THROW(q.validate(2), ConfigError);
  q.times = {-1.0};
  EXPECT_THROW(q.validate(2), ConfigError);
}

TEST(Predict, TimeZeroOnTrainingGridIsReconstruction) {
  const auto m = model_2d(1);
  const Normalization norm{0.1, 2.0};
  const auto u0 = smooth_field(16);
  const Forecast f = predict(m, norm, u0, QuerySpec::on_grid(2, 16, {0.0}), {}, 1.0);
  ASSERT_EQ(f.fields.size(), 1u);

  const auto normed = store::normalize(u0, norm);
  const nets::Vec<float> z = nets::encode(m, normed);
  auto recon = m.decoder.decode_points(z, nets::grid_coordinates(2, 16));
  store::denormalize_inplace(recon, norm);
  ASSERT_EQ(f.fields[0].size(), recon.size());
  for (std::size_t p = 0; p < recon.size(); ++p) EXPECT_EQ(f.fields[0][p], recon[p]);
  EXPECT_TRUE(f.latents.col(0).isApprox(z.cast<double>()));
}

TEST(Predict, SuperResolutionRestrictsToCoarseQuery) {
  const auto m = model_2d(2);
  const auto u0 = smooth_field(16);
  const std::vector<double> times{0.0, 1.5, 3.0};
  const Forecast lo = predict(m, {}, u0, QuerySpec::on_grid(2, 16, times), {}, 1.0);
  const Forecast hi = predict(m, {}, u0, QuerySpec::on_grid(2, 64, times), {}, 1.0);
  for (std::size_t t = 0; t < times.size(); ++t) {
    ASSERT_EQ(hi.fields[t].size(), 64u * 64u);
    for (float v : hi.fields[t]) ASSERT_TRUE(std::isfinite(v));
    for (int i = 0; i < 16; ++i) {
      for (int j = 0; j < 16; ++j) {
        EXPECT_EQ(lo.fields[t][static_cast<std::size_t>(i * 16 + j)],
                  hi.fields[t][static_cast<std::size_t>(4 * i * 64 + 4 * j)]);
      }
    }
  }
}

TEST(Predict, RepeatedQueriesAreIdentical) {
  const auto m = model_2d(2);
  const auto u0 = smooth_field(16);
  const QuerySpec q = QuerySpec::on_grid(2, 8, {0.0, 2.25});
  const Forecast a = predict(m, {}, u0, q, {}, 1.0);
  const Forecast b = predict(m, {}, u0, q, {}, 1.0);
  EXPECT_EQ(a.fields, b.fields);
}

TEST(Predict, WrongInitialResolutionIsShapeError) {
  const auto m = model_2d();
  EXPECT_THROW(predict(m, {}, smooth_field(32), QuerySpec::on_grid(2, 8, {0.0}), {}, 1.0), ShapeError);
}

TEST(Evaluate, OracleModeHasZeroError) {
  const auto b = toy_dataset(16, 4, 2, 8, 4);
  const auto m = nets::init_model<float>(tiny_config(16, 3, 1), 0);
  EvalOptions opts;
  opts.oracle = true;
  const EvalReport r = evaluate_rollout(m, b, opts);
  EXPECT_EQ(r.interp_rmse, 0.0);
  EXPECT_EQ(r.extrap_rmse, 0.0);
  EXPECT_EQ(r.interp_mse, 0.0);
  EXPECT_EQ(r.extrap_mse, 0.0);
  ASSERT_EQ(r.rmse.size(), 2u);
  ASSERT_EQ(r.rmse_mean.size(), 12u);
  for (double v : r.rmse_mean) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.train_steps, 8);
  EXPECT_EQ(r.extrap_steps, 4);
}

TEST(Evaluate, ModelReportIsFiniteAndNonnegative) {
  const auto b = toy_dataset(16, 4, 2, 8, 4);
  const auto m = nets::init_model<float>(tiny_config(16, 3, 1), 0);
  const EvalReport r = evaluate_rollout(m, b);
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  EXPECT_TRUE(ok(r.interp_rmse) && ok(r.extrap_rmse) && ok(r.interp_mse) && ok(r.extrap_mse));
  EXPECT_TRUE(ok(r.avg_jerk_mean) && ok(r.test_recon_mse));
  ASSERT_EQ(r.avg_jerk.size(), 2u);
  ASSERT_EQ(r.latent_variances.size(), 3u);
  EXPECT_EQ(r.active_threshold, default_active_threshold(3));
  for (const auto& row : r.rmse) {
    for (double v : row) EXPECT_TRUE(ok(v));
  }
}

TEST(Evaluate, RolloutMatchesDirectPrediction) {
  const auto b = toy_dataset(16, 4, 2, 8, 4);
  const auto m = nets::init_model<float>(tiny_config(16, 3, 1), 0);
  const EvalReport r = evaluate_rollout(m, b);
  for (std::size_t k = 0; k < b.splits.test_ids.size(); ++k) {
    const Trajectory& traj = b.trajectories.at(static_cast<std::size_t>(b.splits.test_ids[k]));
    const std::size_t first = static_cast<std::size_t>(b.splits.train_window.begin);
    const Forecast f = predict(m, b.norm, traj.snapshots.at(first).values,
                               QuerySpec::on_grid(b.grid.ndim, b.grid.nx, r.times), {}, b.dt);
    for (std::size_t t = 0; t < r.times.size(); ++t) {
      EXPECT_EQ(r.rmse[k][t], relative_rmse(f.fields[t], traj.snapshots.at(first + t).values)) << k << "," << t;
    }
  }
}

TEST(Evaluate, ReportJsonAndCurves) {
  const auto b = toy_dataset(16, 4, 2, 8, 4);
  const auto m = nets::init_model<float>(tiny_config(16, 3, 1), 0);
  const EvalReport r = evaluate_rollout(m, b);
  const EvalReport back = EvalReport::from_json(r.to_json());
  EXPECT_EQ(back.rmse, r.rmse);
  EXPECT_EQ(back.active_coords, r.active_coords);
  EXPECT_DOUBLE_EQ(back.extrap_rmse, r.extrap_rmse);
  EXPECT_TRUE(nlohmann::json::accept(r.to_json()));
  const std::string csv = r.curves_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);
  EXPECT_EQ(csv.rfind("time,window,mean_rmse", 0), 0u);
}

TEST(Evaluate, EmptyTestSplitIsConfigError) {
  auto b = toy_dataset(16, 4, 2, 8, 4);
  b.splits.test_ids.clear();
  const auto m = nets::init_model<float>(tiny_config(16, 3, 1), 0);
  EXPECT_THROW(evaluate_rollout(m, b), ConfigError);
}
