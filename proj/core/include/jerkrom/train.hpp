// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "jerkrom/datastore.hpp"
#include "jerkrom/losses.hpp"
#include "jerkrom/nets.hpp"

namespace jerkrom::train {

using nets::ModelConfig;
using nets::ModelState;
using nets::OdeFunc;

/// Optimiser settings for one training stage (Adam).
struct StageConfig {
  int epochs = 1;
  int batch_size = 8;
  double lr = 1e-3;
  double lr_min = 0.0;        ///< floor of the cosine schedule
  bool cosine = false;        ///< cosine decay from lr to lr_min over all iterations
  double clip_norm = 0.0;     ///< global gradient-norm clip; 0 disables
  int max_iterations = 0;     ///< stop after this many steps; 0 means no limit
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate(const std::string& prefix) const;
};

struct TrainConfig {
  double lambda = 0.1;
  StageConfig stage1{30, 8, 1e-3, 0.0, true, 0.0};
  StageConfig stage2{300, 8, 1e-3, 0.0, false, 1.0};
  int ode_substeps = 10;  ///< RK4 substeps per data interval during stage II
  /// Stage I scores the decoder on this many random grid points per batch
  /// (shared by every snapshot of the batch); 0 scores every point.
  int points_per_snapshot = 0;
  int eval_every = 1;     ///< epochs between test-split evaluations
  std::uint64_t seed = 0;

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
/// Unknown keys raise ConfigError naming the key.
TrainConfig train_config_from_json(const std::string& text);

/// A four-snapshot window: snapshots start..start+3 of the training window of
/// trajectory `trajectory`.
struct Segment {
  int trajectory = 0;
  int start = 0;
  bool operator==(const Segment&) const = default;
};

/// All overlapping four-snapshot windows of the training window of every
/// trajectory in `ids` (the training split when empty).
std::vector<Segment> make_segments(const DatasetBundle& bundle, const std::vector<int>& ids = {});

/// Normalised snapshots of `segments` laid out as a SegmentBatch scored on the
/// full grid.
losses::SegmentBatch<float> gather_batch(const DatasetBundle& bundle, const std::vector<Segment>& segments);

/// Restricts the decoder targets of `batch` to `points` grid points drawn
/// without replacement.
void subsample_points(losses::SegmentBatch<float>& batch, int points, std::mt19937_64& rng);

/// One epoch of mini-batches: a fresh permutation of 0..items-1 cut into
/// consecutive batches of `batch_size` (the last may be shorter).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t items, int batch_size, std::mt19937_64& rng);

/// Adam with bias correction over a flat parameter vector.
class Adam {
public:
  Adam(std::size_t n, const StageConfig& cfg);
  void step(std::vector<float>& params, const std::vector<float>& grad, double lr);
  long steps() const { return t_; }

private:
  StageConfig cfg_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

/// Learning rate of iteration `it` (0-based) out of `total`.
double scheduled_lr(const StageConfig& cfg, long it, long total);

struct IterationRecord {
  long iteration = 0;
  int epoch = 0;
  double loss = 0.0;
  double recon = 0.0;
  double jerk = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  long iteration = 0;
  double train_loss = 0.0;
  double train_recon = 0.0;
  double train_jerk = 0.0;
  double test_loss = -1.0;  ///< stage II; negative when not evaluated
  double test_recon = -1.0;
  double test_jerk = -1.0;
};

struct History {
  std::string stage;  ///< "I" or "II"
  std::vector<IterationRecord> iterations;
  std::vector<EpochRecord> epochs;

  std::string to_json() const;
  static History from_json(const std::string& text);
};

using Logger = std::function<void(const std::string& line)>;

struct Stage1Eval {
  double recon_mse = 0.0;  ///< normalised units, over every snapshot of the window
  double avg_jerk = 0.0;   ///< mean per-window jerk pooled over all trajectories
};

/// Reconstruction MSE and latent jerk of trajectories `ids` over the training window.
Stage1Eval evaluate_stage1(const ModelState<float>& model, const DatasetBundle& bundle,
                           const std::vector<int>& ids);

/// Minimises recon + lambda * jerk over shuffled segments of the training split.
/// Only encoder and decoder parameters change. Throws TrainingDivergedError on
/// a non-finite loss.
History train_stage1(const DatasetBundle& bundle, ModelState<float>& model, const TrainConfig& cfg,
                     const Logger& log = {});

/// Encodes every trajectory over the training window (train and test split),
/// or over training plus extrapolation windows when `full_window` is set.
LatentDataset encode_dataset(const ModelState<float>& model, const DatasetBundle& bundle,
                             bool full_window = false);

/// Per-coordinate mean and pooled standard deviation of the training latents.
std::pair<nets::Vec<float>, float> latent_standardization(const LatentDataset& latents);

/// Mean over `batch` of sum_t ||zhat(t) - z(t)||^2 where zhat is integrated by
/// RK4 from each trajectory's first state. With `grad` non-null, accumulates
/// d(loss * weight)/dparams.
double stage2_batch_loss(const OdeFunc<float>& f, const std::vector<const LatentTrajectory*>& batch,
                         int substeps, std::vector<float>* grad = nullptr, double weight = 1.0);

/// Trains the latent vector field on whole training-split trajectories. Sets
/// the standardisation of `f` from the training latents first. Only ODE
/// parameters change.
History train_stage2(const LatentDataset& latents, OdeFunc<float>& f, const TrainConfig& cfg,
                     const Logger& log = {});

struct SweepRow {
  double lambda = 0.0;
  double test_recon_mse = 0.0;
  double test_jerk = 0.0;
  bool ok = true;
  std::string error;
};

using SweepCallback = std::function<void(double lambda, const ModelState<float>&, const History&)>;

/// Trains stage I once per lambda from the same initial weights and data.
/// A failing run is recorded and the sweep continues.
std::vector<SweepRow> sweep_lambda(const DatasetBundle& bundle, const ModelConfig& model_cfg,
                                   const std::vector<double>& lambdas, const TrainConfig& cfg,
                                   const Logger& log = {}, const SweepCallback& on_trained = {});

std::string sweep_to_csv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> sweep_from_csv(const std::string& text);

} // namespace jerkrom::train
