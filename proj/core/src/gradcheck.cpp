// SPDX-License-Identifier: Apache-2.0
#include "jerkrom/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace jerkrom::nets {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed() ? "gradient check passed" : "gradient check FAILED") << ": max relative error "
     << max_rel_error << " (tolerance " << tolerance << ") over " << entries.size() << " entries";
  if (!worst_block.empty()) os << ", worst block " << worst_block;
  return os.str();
}

GradCheckReport check_gradients(ModelState<double>& state, const LossFn& loss,
                                const GradCheckOptions& opts) {
  GradCheckReport report;
  report.tolerance = opts.tolerance;

  ModelGrads<double> grads(state);
  loss(state, &grads);

  std::mt19937_64 rng(opts.seed);
  auto check_set = [&](ParamSet<double>& p, const std::vector<double>& g) {
    for (std::size_t bi = 0; bi < p.blocks().size(); ++bi) {
      const BlockInfo& b = p.blocks()[bi];
      std::vector<std::size_t> picks(b.size);
      for (std::size_t k = 0; k < b.size; ++k) picks[k] = k;
      std::shuffle(picks.begin(), picks.end(), rng);
      picks.resize(std::min<std::size_t>(picks.size(), static_cast<std::size_t>(opts.samples_per_block)));
      for (std::size_t k : picks) {
        double& v = p.values()[b.offset + k];
        const double saved = v;
        v = saved + opts.step;
        const double up = loss(state, nullptr);
        v = saved - opts.step;
        const double down = loss(state, nullptr);
        v = saved;
        GradCheckEntry e;
        e.block = b.name;
        e.index = k;
        e.analytic = g[b.offset + k];
        e.numeric = (up - down) / (2.0 * opts.step);
        e.rel_error = std::abs(e.analytic - e.numeric) /
                      std::max({std::abs(e.analytic), std::abs(e.numeric), opts.floor});
        if (!(e.rel_error <= report.max_rel_error)) {
          report.max_rel_error = std::isnan(e.rel_error) ? INFINITY : e.rel_error;
          report.worst_block = e.block;
        }
        report.entries.push_back(std::move(e));
      }
    }
  };
  check_set(state.encoder.params(), grads.encoder);
  check_set(state.decoder.params(), grads.decoder);
  check_set(state.odefunc.params(), grads.odefunc);
  return report;
}

void jitter_biases(ModelState<double>& state, std::uint64_t seed, double sigma) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  auto jitter = [&](ParamSet<double>& p) {
    for (const auto& b : p.blocks()) {
      if (!b.name.ends_with("bias")) continue;
      for (std::size_t k = 0; k < b.size; ++k) p.values()[b.offset + k] += n(rng);
    }
  };
  jitter(state.encoder.params());
  jitter(state.decoder.params());
  jitter(state.odefunc.params());
}

} // namespace jerkrom::nets
