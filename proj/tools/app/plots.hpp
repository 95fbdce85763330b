// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "jerkrom/datastore.hpp"

namespace jerkrom::app {

/// File names shared by the commands that write run artifacts and the plot exporter.
namespace files {
inline constexpr const char* eval_report = "eval-report.json";
inline constexpr const char* error_curves = "error-curves.csv";
inline constexpr const char* latent_series = "latent-series.csv";
inline constexpr const char* history_stage1 = "history-stage1.json";
inline constexpr const char* history_stage2 = "history-stage2.json";
inline constexpr const char* sweep = "sweep.csv";
} // namespace files

struct PlotExport {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> missing;  ///< expected inputs that were absent
};

/// trajectory,time,z0,...,z{d-1}: one row per stored state of each listed trajectory.
std::string latent_series_csv(const LatentDataset& latents, const std::vector<int>& source_ids);

/// Renders an SVG figure and a CSV table for every input present in
/// `run_dir` into `out_dir`:
///   eval-report.json    -> error-curve (RMSE vs time, train/extrapolation windows shaded)
///   latent-series.csv   -> latent-series (coordinates vs time, average jerk noted)
///   history-stage1.json -> loss-history (train and test curves; stage II added when present)
///   sweep.csv           -> lambda-sweep (test MSE and jerk per lambda, minimum marked)
/// Throws IoError listing all four inputs when none is present.
PlotExport export_plots(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir,
                        bool overwrite = false);

} // namespace jerkrom::app
