// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "jerkrom/error.hpp"
#include "jerkrom/integrate.hpp"

using namespace jerkrom;
using namespace jerkrom::ode;

namespace {

const Rhs decay = [](const Eigen::VectorXd& z, Eigen::VectorXd& dz) { dz = -z; };
const Rhs rotation = [](const Eigen::VectorXd& z, Eigen::VectorXd& dz) {
  dz.resize(2);
  dz << -z(1), z(0);
};

IntegratorSpec rk4(double h) {
  IntegratorSpec s;
  s.max_substep = h;
  return s;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

} // namespace

TEST(Rk4, ZeroDynamicsKeepsState) {
  const Rhs zero = [](const Eigen::VectorXd& z, Eigen::VectorXd& dz) { dz = Eigen::VectorXd::Zero(z.size()); };
  const Eigen::VectorXd z0 = vec({0.5, -1.25, 3.0});
  const Eigen::MatrixXd out = integrate(zero, z0, 0.0, {0.0, 0.3, 2.0, 7.5}, rk4(0.1));
  for (Eigen::Index i = 0; i < out.cols(); ++i) EXPECT_EQ(out.col(i), z0);
}

TEST(Rk4, InitialTimeReturnsInitialStateExactly) {
  const Eigen::VectorXd z0 = vec({0.123456789});
  EXPECT_EQ(integrate(decay, z0, 0.0, {0.0}, rk4(0.01))(0, 0), 0.123456789);
}

TEST(Rk4, ExponentialOracle) {
  const Eigen::MatrixXd out = integrate(decay, vec({1.0}), 0.0, {1.0}, rk4(1e-2));
  EXPECT_NEAR(out(0, 0), std::exp(-1.0), 1e-6);
}

TEST(Rk4, RotationOracle) {
  const Eigen::MatrixXd out = integrate(rotation, vec({1.0, 0.0}), 0.0, {std::numbers::pi / 2}, rk4(1e-2));
  EXPECT_NEAR(out(0, 0), 0.0, 1e-6);
  EXPECT_NEAR(out(1, 0), 1.0, 1e-6);
}

TEST(Rk4, FourthOrderConvergence) {
  const double t = 2.0;
  auto err = [&](double h) {
    return std::abs(integrate(decay, vec({1.0}), 0.0, {t}, rk4(h))(0, 0) - std::exp(-t));
  };
  const double ratio = err(0.2) / err(0.1);
  EXPECT_GE(ratio, 12.0);
  EXPECT_LE(ratio, 20.0);

  auto rerr = [&](double h) {
    const Eigen::MatrixXd o = integrate(rotation, vec({1.0, 0.0}), 0.0, {t}, rk4(h));
    return std::hypot(o(0, 0) - std::cos(t), o(1, 0) - std::sin(t));
  };
  EXPECT_GE(rerr(0.2) / rerr(0.1), 12.0);
}

TEST(Rk4, TwoSegmentsEqualOneShot) {
  const double t = 1.6;
  const Eigen::MatrixXd once = integrate(rotation, vec({1.0, 0.0}), 0.0, {t}, rk4(0.05));
  const Eigen::MatrixXd half = integrate(rotation, vec({1.0, 0.0}), 0.0, {t / 2}, rk4(0.05));
  const Eigen::MatrixXd rest = integrate(rotation, half.col(0), t / 2, {t}, rk4(0.05));
  EXPECT_LT((once - rest).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Rk4, OffGridTimesDoNotPerturbTheMarch) {
  const Eigen::MatrixXd a = integrate(decay, vec({1.0}), 0.0, {0.25, 0.55, 1.0}, rk4(0.1));
  const Eigen::MatrixXd b = integrate(decay, vec({1.0}), 0.0, {1.0}, rk4(0.1));
  EXPECT_EQ(a(0, 2), b(0, 0));
  EXPECT_NEAR(a(0, 1), std::exp(-0.55), 1e-6);
}

TEST(Rk4, ContinuityBetweenGridTimes) {
  // |z(t + d) - z(t)| shrinks linearly with d.
  std::vector<double> deltas{1e-1, 1e-2, 1e-3};
  std::vector<double> gaps;
  for (double d : deltas) {
    const Eigen::MatrixXd o = integrate(rotation, vec({1.0, 0.0}), 0.0, {1.0, 1.0 + d}, rk4(0.1));
    gaps.push_back((o.col(1) - o.col(0)).norm());
  }
  const double slope = std::log(gaps[0] / gaps[2]) / std::log(deltas[0] / deltas[2]);
  EXPECT_NEAR(slope, 1.0, 0.05);
}

TEST(Rk4, BlowupReportsLastFiniteTime) {
  const Rhs explode = [](const Eigen::VectorXd& z, Eigen::VectorXd& dz) { dz = z.array().square() * 10.0; };
  try {
    integrate(explode, vec({1.0}), 0.0, {5.0}, rk4(0.01));
    FAIL() << "expected a blow-up";
  } catch (const SolverBlowupError& e) {
    EXPECT_GE(e.last_finite_time(), 0.0);
    EXPECT_LT(e.last_finite_time(), 0.2);
  }
}

TEST(Integrate, RejectsUnsortedOrEarlyTimes) {
  EXPECT_THROW(integrate(decay, vec({1.0}), 0.0, {1.0, 0.5}, rk4(0.1)), ConfigError);
  EXPECT_THROW(integrate(decay, vec({1.0}), 1.0, {0.5}, rk4(0.1)), ConfigError);
}

TEST(Rk45, MeetsTolerancesOnOracles) {
  IntegratorSpec s;
  s.method = Method::rk45;
  const Eigen::MatrixXd e = integrate(decay, vec({1.0}), 0.0, {0.5, 1.0, 3.0}, s);
  EXPECT_NEAR(e(0, 1), std::exp(-1.0), 1e-5);
  EXPECT_NEAR(e(0, 2), std::exp(-3.0), 1e-5);
  const Eigen::MatrixXd r = integrate(rotation, vec({1.0, 0.0}), 0.0, {std::numbers::pi / 2}, s);
  EXPECT_NEAR(r(0, 0), 0.0, 1e-5);
  EXPECT_NEAR(r(1, 0), 1.0, 1e-5);
}

TEST(Rk45, TighterToleranceIsMoreAccurate) {
  IntegratorSpec loose, tight;
  loose.method = tight.method = Method::rk45;
  loose.rtol = 1e-3;
  loose.atol = 1e-5;
  tight.rtol = 1e-9;
  tight.atol = 1e-11;
  const double el = std::abs(integrate(rotation, vec({1.0, 0.0}), 0.0, {6.0}, loose)(0, 0) - std::cos(6.0));
  const double et = std::abs(integrate(rotation, vec({1.0, 0.0}), 0.0, {6.0}, tight)(0, 0) - std::cos(6.0));
  EXPECT_LT(et, el);
  EXPECT_LT(et, 1e-8);
}

TEST(IntegratorSpec, DefaultSubstep) {
  IntegratorSpec s;
  EXPECT_DOUBLE_EQ(s.substep_for(1.0), 0.1);
  EXPECT_DOUBLE_EQ(s.substep_for(0.5), 0.05);
  EXPECT_DOUBLE_EQ(s.substep_for(4.0), 0.1);
  s.max_substep = 0.02;
  EXPECT_DOUBLE_EQ(s.substep_for(1.0), 0.02);
  EXPECT_EQ(method_from_string("rk45"), Method::rk45);
  EXPECT_THROW(method_from_string("euler"), ConfigError);
}
