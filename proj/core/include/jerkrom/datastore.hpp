// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "jerkrom/field.hpp"

namespace jerkrom {

/// Global scalar normalisation of the vorticity field.
struct Normalization {
  double mean = 0.0;
  double std = 1.0;
  bool operator==(const Normalization&) const = default;
};

/// Half-open index range [begin, end) into a stored trajectory.
struct TimeWindow {
  int begin = 0;
  int end = 0;
  int length() const { return end - begin; }
  bool operator==(const TimeWindow&) const = default;
};

struct Splits {
  std::vector<int> train_ids;
  std::vector<int> test_ids;
  TimeWindow train_window;
  TimeWindow extrap_window;  ///< empty when no extrapolation window is configured
  bool operator==(const Splits&) const = default;
};

/// How build_dataset cuts a corpus. train_steps == 0 means "everything after
/// burn-in (minus the extrapolation window)". n_train < 0 means "all but n_test".
struct SplitSpec {
  int burn_in = 10;
  int train_steps = 30;
  int extrap_steps = 10;
  int n_train = -1;
  int n_test = 0;
};

struct DatasetBundle {
  GridSpec grid;
  double dt = 1.0;
  int burn_in = 0;
  std::vector<Trajectory> trajectories;  ///< burn-in already removed
  Normalization norm;
  Splits splits;
};

/// Latent time series of one source trajectory; column j holds z(t0 + j*dt).
struct LatentTrajectory {
  Eigen::MatrixXd states;
  double dt = 1.0;
  double t0 = 0.0;
  int source_id = -1;

  int dim() const { return static_cast<int>(states.rows()); }
  int length() const { return static_cast<int>(states.cols()); }
};

struct LatentDataset {
  std::vector<LatentTrajectory> trajectories;
  std::vector<int> train_ids;  ///< source ids belonging to the training split
  std::vector<int> test_ids;
  std::string window;          ///< "train" or "full"
  std::string model_fingerprint;
};

/// A named parameter array of a checkpoint. Values are float32 in column-major
/// (Fortran) order; weight matrices have shape {out, in}.
struct NamedArray {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string stage;               ///< "I" or "II"
  std::string architecture_json;   ///< architecture config, stored verbatim
  std::string config_fingerprint;  ///< fingerprint of the training config
  std::string train_config_json;
  std::vector<NamedArray> arrays;
};

namespace store {

inline constexpr int kFormatVersion = 1;

/// Statistics of the training trajectories over the training window.
Normalization compute_normalization(const DatasetBundle& bundle);

std::vector<float> normalize(std::span<const float> field, const Normalization& norm);
std::vector<float> denormalize(std::span<const float> field, const Normalization& norm);
void normalize_inplace(std::span<float> field, const Normalization& norm);
void denormalize_inplace(std::span<float> field, const Normalization& norm);

/// Writes `bundle` as a directory (manifest.json + raw little-endian arrays),
/// atomically via a temporary sibling directory and rename.
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& path,
                  bool overwrite = false);
DatasetBundle load_dataset(const std::filesystem::path& path);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path,
                     bool overwrite = false);
/// Throws ConfigError when `expected_fingerprint` is non-empty, differs from
/// the stored one and `allow_mismatch` is false.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::string& expected_fingerprint = {},
                           bool allow_mismatch = false);

void save_latents(const LatentDataset& latents, const std::filesystem::path& path,
                  bool overwrite = false);
LatentDataset load_latents(const std::filesystem::path& path);

/// Raw float32 snapshot file (single array, manifest-free) used by `predict --init`.
void write_raw_field(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_raw_field(const std::filesystem::path& path, std::size_t expected_count);

/// Human-readable summary of a dataset, checkpoint or latent directory.
std::string describe(const std::filesystem::path& path);

/// Kind of container found at `path`: "dataset", "checkpoint", "latents" or "".
std::string container_kind(const std::filesystem::path& path);

} // namespace store
} // namespace jerkrom
