// SPDX-License-Identifier: Apache-2.0
#include "jerkrom/integrate.hpp"

#include <algorithm>
#include <cmath>

#include "jerkrom/error.hpp"

namespace jerkrom::ode {

double IntegratorSpec::substep_for(double dt) const {
  if (max_substep > 0.0) return max_substep;
  return std::min(dt / 10.0, 0.1);
}

void IntegratorSpec::validate() const {
  if (!std::isfinite(max_substep)) throw ConfigError("max_substep must be finite", "eval.max_substep");
  if (!(rtol > 0.0)) throw ConfigError("rtol must be positive", "eval.rtol");
  if (!(atol > 0.0)) throw ConfigError("atol must be positive", "eval.atol");
}

std::string to_string(Method m) { return m == Method::rk4 ? "rk4" : "rk45"; }

Method method_from_string(const std::string& s) {
  if (s == "rk4") return Method::rk4;
  if (s == "rk45") return Method::rk45;
  throw ConfigError("unknown integrator '" + s + "' (expected rk4 or rk45)", "eval.integrator");
}

namespace {

void rk4_step(const Rhs& f, Eigen::VectorXd& z, double h, Eigen::VectorXd k[4], Eigen::VectorXd& tmp) {
  f(z, k[0]);
  tmp = z + 0.5 * h * k[0];
  f(tmp, k[1]);
  tmp = z + 0.5 * h * k[1];
  f(tmp, k[2]);
  tmp = z + h * k[2];
  f(tmp, k[3]);
  z += (h / 6.0) * (k[0] + 2.0 * k[1] + 2.0 * k[2] + k[3]);
}

void check_finite(const Eigen::VectorXd& z, double t_last) {
  if (!z.allFinite()) {
    throw SolverBlowupError("latent state became non-finite after t=" + std::to_string(t_last), t_last);
  }
}

void check_times(double t0, const std::vector<double>& times) {
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(times[i])) throw ConfigError("query times must be finite", "times");
    if (times[i] < t0) throw ConfigError("query times must not precede the initial time", "times");
    if (i > 0 && times[i] < times[i - 1]) throw ConfigError("query times must be sorted", "times");
  }
}

Eigen::MatrixXd integrate_rk4(const Rhs& f, const Eigen::VectorXd& z0, double t0,
                              const std::vector<double>& times, double h) {
  if (!(h > 0.0)) throw ConfigError("RK4 substep must be positive", "eval.max_substep");
  Eigen::MatrixXd out(z0.size(), static_cast<Eigen::Index>(times.size()));
  Eigen::VectorXd z = z0, k[4], tmp, partial;
  long step = 0;
  double t = t0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double target = times[i];
    const double eps = 1e-12 * std::max(1.0, std::abs(target));
    while (t0 + static_cast<double>(step + 1) * h <= target + eps) {
      rk4_step(f, z, h, k, tmp);
      ++step;
      check_finite(z, t);
      t = t0 + static_cast<double>(step) * h;
    }
    if (target - t > eps) {
      partial = z;
      rk4_step(f, partial, target - t, k, tmp);
      check_finite(partial, t);
      out.col(static_cast<Eigen::Index>(i)) = partial;
    } else {
      out.col(static_cast<Eigen::Index>(i)) = z;
    }
  }
  return out;
}

// Dormand-Prince 5(4) with the standard step-size controller; steps are
// clipped to land on every requested time.
Eigen::MatrixXd integrate_rk45(const Rhs& f, const Eigen::VectorXd& z0, double t0,
                               const std::vector<double>& times, double rtol, double atol) {
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                          b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;

  const Eigen::Index n = z0.size();
  Eigen::MatrixXd out(n, static_cast<Eigen::Index>(times.size()));
  Eigen::VectorXd z = z0, k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), znew(n), err(n);
  double t = t0;
  double h = 0.0;
  f(z, k1);
  {
    const double d0 = (z.array() / (atol + rtol * z.array().abs())).matrix().norm() / std::sqrt(double(n));
    const double d1 = (k1.array() / (atol + rtol * z.array().abs())).matrix().norm() / std::sqrt(double(n));
    h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  }
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double target = times[i];
    while (target - t > 1e-12 * std::max(1.0, std::abs(target))) {
      const bool last = t + h >= target;
      const double step = last ? target - t : h;
      tmp = z + step * a21 * k1;
      f(tmp, k2);
      tmp = z + step * (a31 * k1 + a32 * k2);
      f(tmp, k3);
      tmp = z + step * (a41 * k1 + a42 * k2 + a43 * k3);
      f(tmp, k4);
      tmp = z + step * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
      f(tmp, k5);
      tmp = z + step * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
      f(tmp, k6);
      znew = z + step * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      f(znew, k7);
      err = step * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      const Eigen::ArrayXd sc = atol + rtol * z.array().abs().max(znew.array().abs());
      const double enorm = std::sqrt((err.array() / sc).square().mean());
      if (!std::isfinite(enorm)) {
        if (step < 1e-12) throw SolverBlowupError("RK45 step underflow at t=" + std::to_string(t), t);
        h = step * 0.1;
        continue;
      }
      if (enorm <= 1.0) {
        t = last ? target : t + step;
        z = znew;
        k1 = k7;
        check_finite(z, t);
      }
      const double factor = enorm == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(enorm, -0.2), 0.2, 5.0);
      if (!last || enorm > 1.0) h = step * factor;
      if (h < 1e-12 * std::max(1.0, std::abs(t))) {
        throw SolverBlowupError("RK45 step size underflow at t=" + std::to_string(t), t);
      }
    }
    out.col(static_cast<Eigen::Index>(i)) = z;
  }
  return out;
}

} // namespace

Eigen::MatrixXd integrate(const Rhs& f, const Eigen::VectorXd& z0, double t0,
                          const std::vector<double>& times, const IntegratorSpec& spec) {
  spec.validate();
  check_times(t0, times);
  if (!z0.allFinite()) throw SolverBlowupError("initial latent state is not finite", t0);
  if (spec.method == Method::rk4) {
    const double h = spec.max_substep > 0.0 ? spec.max_substep : 0.1;
    return integrate_rk4(f, z0, t0, times, h);
  }
  return integrate_rk45(f, z0, t0, times, spec.rtol, spec.atol);
}

} // namespace jerkrom::ode
