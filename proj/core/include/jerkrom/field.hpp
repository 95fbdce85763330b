// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace jerkrom {

/// Uniform periodic grid on the unit interval/square. Point (i0, i1) sits at
/// (i0/nx, i1/nx) and is stored at flat index i0*nx + i1.
struct GridSpec {
  int nx = 64;
  int ndim = 2;

  /// Throws ConfigError unless nx >= 8 is a power of two and ndim is 1 or 2.
  void validate() const;

  std::size_t points() const {
    return ndim == 1 ? static_cast<std::size_t>(nx)
                     : static_cast<std::size_t>(nx) * static_cast<std::size_t>(nx);
  }
  double coord(int i) const { return static_cast<double>(i) / nx; }

  /// Coordinates of every grid point, packed as ndim values per point.
  std::vector<double> coordinates() const;

  bool operator==(const GridSpec&) const = default;
};

/// One scalar field on a grid at one time.
struct FieldSnapshot {
  std::vector<float> values;
  double time = 0.0;
};

/// Snapshots with uniform spacing `dt`.
struct Trajectory {
  std::vector<FieldSnapshot> snapshots;
  double dt = 1.0;

  std::size_t size() const { return snapshots.size(); }
};

/// Throws ShapeError if any snapshot size differs from grid.points() or holds
/// non-finite values.
void check_trajectory(const Trajectory& traj, const GridSpec& grid);

/// Stateless seed derivation: independent stream seeds from a root seed.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);

} // namespace jerkrom
