// SPDX-License-Identifier: Apache-2.0
#include "jerkrom/field.hpp"

#include <cmath>
#include <string>

#include "jerkrom/error.hpp"

namespace jerkrom {

void GridSpec::validate() const {
  if (ndim != 1 && ndim != 2) {
    throw ConfigError("grid ndim must be 1 or 2, got " + std::to_string(ndim), "data.ndim");
  }
  if (nx < 8 || (nx & (nx - 1)) != 0) {
    throw ConfigError("grid nx must be a power of two >= 8, got " + std::to_string(nx), "data.nx");
  }
}

std::vector<double> GridSpec::coordinates() const {
  std::vector<double> out;
  out.reserve(points() * static_cast<std::size_t>(ndim));
  if (ndim == 1) {
    for (int i = 0; i < nx; ++i) out.push_back(coord(i));
  } else {
    for (int i0 = 0; i0 < nx; ++i0) {
      for (int i1 = 0; i1 < nx; ++i1) {
        out.push_back(coord(i0));
        out.push_back(coord(i1));
      }
    }
  }
  return out;
}

void check_trajectory(const Trajectory& traj, const GridSpec& grid) {
  const std::size_t n = grid.points();
  for (std::size_t s = 0; s < traj.snapshots.size(); ++s) {
    const auto& v = traj.snapshots[s].values;
    if (v.size() != n) {
      throw ShapeError("snapshot " + std::to_string(s) + " has " + std::to_string(v.size()) +
                       " values, grid expects " + std::to_string(n));
    }
    for (float x : v) {
      if (!std::isfinite(x)) {
        throw ShapeError("snapshot " + std::to_string(s) + " contains non-finite values");
      }
    }
  }
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
  // splitmix64 finalizer over a golden-ratio stride
  std::uint64_t z = root + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

} // namespace jerkrom
