// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "jerkrom/nets.hpp"
#include "jerkrom/pdegen.hpp"

namespace jerkrom::testing {

/// Directory removed on scope exit.
class TempDir {
public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("jerkrom-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

/// A model small enough for finite-difference checks (well under 1e4 parameters).
inline nets::ModelConfig tiny_config(int nx = 8, int dz = 3, int ndim = 2) {
  nets::ModelConfig c;
  c.encoder.nx = nx;
  c.encoder.ndim = ndim;
  c.encoder.stem_width = 2;
  c.encoder.widths = {2, 4};
  c.encoder.blocks = {1, 1};
  c.decoder.hidden_layers = 2;
  c.decoder.width = 6;
  c.decoder.ndim = ndim;
  c.odefunc.hidden_layers = 2;
  c.odefunc.width = 6;
  c.encoder.latent_dim = c.decoder.latent_dim = c.odefunc.latent_dim = dz;
  return c;
}

/// Dataset of 1D travelling waves: cheap and with known structure.
inline DatasetBundle toy_dataset(int nx = 16, int n_train = 6, int n_test = 2, int train_steps = 8,
                                 int extrap_steps = 4, std::uint64_t seed = 3) {
  pdegen::ToyWaveParams p;
  p.snapshots = train_steps + extrap_steps;
  const GridSpec g{nx, 1};
  std::vector<Trajectory> trajs;
  for (auto& t : pdegen::generate_toy_wave(g, n_train + n_test, seed, p)) trajs.push_back(std::move(t.trajectory));
  SplitSpec s;
  s.burn_in = 0;
  s.train_steps = train_steps;
  s.extrap_steps = extrap_steps;
  s.n_train = n_train;
  s.n_test = n_test;
  return pdegen::build_dataset(std::move(trajs), g, s);
}

} // namespace jerkrom::testing
