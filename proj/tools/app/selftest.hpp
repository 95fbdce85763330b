// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

namespace jerkrom::app {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Jerk of constant, quadratic and cubic sequences.
CheckResult check_jerk_identities();
/// Analytic vs central-difference gradients of the stage-I losses in double
/// precision on a small model.
CheckResult check_gradients();
/// RK4 on exponential decay and rotation: accuracy, order and restartability.
CheckResult check_integrator();
/// Taylor-Green vortex decay on 64x64 at nu = 1e-3 up to t = 1.
CheckResult check_taylor_green();
/// Empirical variance of low Fourier modes over 2000 random fields.
CheckResult check_grf_spectrum();

/// All of the above in order; `on_result` sees each result as it completes.
std::vector<CheckResult> run_selftest(const std::function<void(const CheckResult&)>& on_result = {});

} // namespace jerkrom::app
