// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace jerkrom::ode {

/// Autonomous right-hand side: writes dz/dt for state z.
using Rhs = std::function<void(const Eigen::VectorXd& z, Eigen::VectorXd& dz)>;

enum class Method { rk4, rk45 };

struct IntegratorSpec {
  Method method = Method::rk4;
  /// RK4 substep; <= 0 selects min(dt/10, 0.1) from the caller's data spacing.
  double max_substep = 0.0;
  double rtol = 1e-5;  ///< RK45 only
  double atol = 1e-7;  ///< RK45 only

  /// Substep actually used for data spacing `dt`.
  double substep_for(double dt) const;
  void validate() const;
};

std::string to_string(Method m);
Method method_from_string(const std::string& s);

/// Integrates from (t0, z0) and returns one column per requested time.
/// RK4 substeps lie on the grid t0 + k*h; a requested time off that grid is
/// reached by a partial step that does not perturb the main march. A request
/// at t0 returns z0 unchanged. Throws SolverBlowupError on a non-finite state.
Eigen::MatrixXd integrate(const Rhs& f, const Eigen::VectorXd& z0, double t0,
                          const std::vector<double>& times, const IntegratorSpec& spec);

} // namespace jerkrom::ode
