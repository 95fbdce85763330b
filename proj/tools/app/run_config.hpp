// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jerkrom/infer.hpp"
#include "jerkrom/nets.hpp"
#include "jerkrom/pdegen.hpp"
#include "jerkrom/train.hpp"

namespace jerkrom::app {

using json = nlohmann::json;

/// How gen-data builds a corpus. `source` is "ns" (forced Navier-Stokes) or
/// "toy" (closed-form 1D waves, for smoke runs).
struct DataConfig {
  std::string source = "ns";
  int nx = 32;
  int ndim = 2;
  int trajectories = 80;
  int n_train = 64;
  int n_test = 16;
  int burn_in = 10;
  int train_steps = 30;
  int extrap_steps = 10;
  double viscosity = 1e-3;
  double forcing_amplitude = 0.1;
  double sim_dt = 1e-2;
  double snapshot_dt = 1.0;
  int oversample = 1;
  std::uint64_t seed = 1;
  int workers = 0;

  GridSpec grid() const { return GridSpec{nx, ndim}; }
  int snapshots() const { return burn_in + train_steps + extrap_steps; }
  pdegen::CorpusSpec corpus() const;
  SplitSpec split() const;
  void validate() const;
};

struct EvalConfig {
  ode::IntegratorSpec integrator;
  double active_threshold = 0.0;  ///< <= 0 selects the d_z default

  infer::EvalOptions options() const;
};

/// A fully resolved configuration. `resolved` is the canonical tree whose
/// compact dump is fingerprinted.
struct RunConfig {
  DataConfig data;
  nets::ModelConfig model;
  train::TrainConfig train;
  EvalConfig eval;

  std::string source;                  ///< config file path, empty for none
  std::vector<std::string> overrides;  ///< --set arguments in order
  json resolved;
  std::string fingerprint;
};

/// Defaults sized for a desktop run on a 32x32 grid.
json default_config_tree();

/// Parses `key=value` with a dotted key; the value is read as JSON when it
/// parses and as a string otherwise. Throws ConfigError naming the argument.
void apply_override(json& tree, const std::string& assignment);

/// Overlays `patch` on `base`: objects merge key by key, everything else
/// replaces. An encoder section naming a preset replaces the base encoder.
void merge_tree(json& base, const json& patch);

/// Reads a JSON config file. A missing or unreadable file and malformed JSON
/// raise ConfigError whose key is the path.
json read_config_file(const std::filesystem::path& path);

/// Resolves `base` overlaid by the file at `config_path` (if non-empty) and
/// the overrides, then validates every section. `model.latent_dim` sets d_z
/// of all three networks; the model grid follows the data section.
RunConfig resolve_config(json base, const std::string& config_path,
                         const std::vector<std::string>& overrides);

/// Rebuilds a RunConfig from a canonical tree (as stored with artifacts).
RunConfig config_from_tree(const json& tree);

} // namespace jerkrom::app
