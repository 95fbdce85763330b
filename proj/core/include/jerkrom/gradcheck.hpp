// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "jerkrom/nets.hpp"

namespace jerkrom::nets {

struct GradCheckEntry {
  std::string block;
  std::size_t index = 0;  ///< offset within the block
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  std::string worst_block;
  std::vector<GradCheckEntry> entries;

  bool passed() const { return max_rel_error < tolerance; }
  /// One line: pass/fail, worst error and the block it came from.
  std::string summary() const;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-6;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  int samples_per_block = 6;
  std::uint64_t seed = 0;
};

/// Loss evaluated at the current parameters. When `grads` is non-null the
/// analytic gradient is accumulated into it.
using LossFn = std::function<double(const ModelState<double>&, ModelGrads<double>*)>;

/// Compares the analytic gradient of `loss` with central finite differences on
/// a random subset of entries from every parameter block of every network.
GradCheckReport check_gradients(ModelState<double>& state, const LossFn& loss,
                                const GradCheckOptions& opts = {});

/// Adds N(0, sigma^2) noise to every block whose name ends in "bias". Zero
/// biases can put ReLU inputs exactly on the kink, where central differences
/// see slope 1/2.
void jitter_biases(ModelState<double>& state, std::uint64_t seed, double sigma = 0.05);

} // namespace jerkrom::nets
