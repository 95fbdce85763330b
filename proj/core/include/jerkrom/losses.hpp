// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include "jerkrom/nets.hpp"

namespace jerkrom::losses {

using nets::Mat;
using nets::ModelGrads;
using nets::ModelState;

/// |S| segments of four consecutive normalised snapshots. Column 4s+j of
/// `fields` is snapshot j of segment s and is the encoder input. The decoder
/// is scored at `coords` (ndim x Q) against `targets` (Q x 4|S|); when
/// `targets` is empty the targets are `fields` and `coords` is the full grid.
template <typename T>
struct SegmentBatch {
  Mat<T> fields;
  Eigen::MatrixXd coords;
  Mat<T> targets;

  int segments() const { return static_cast<int>(fields.cols() / 4); }
  const Mat<T>& target() const { return targets.size() > 0 ? targets : fields; }
  /// Throws ShapeError unless there are 4|S| >= 4 columns and the targets
  /// match the coordinates.
  void validate() const;
};

struct LossParts {
  double total = 0.0;
  double recon = 0.0;
  double jerk = 0.0;
};

/// Mean of squared residuals over all points of all 4|S| snapshots. When
/// `grad` is non-null it receives dL/drecon.
template <typename T>
double recon_from_outputs(const Mat<T>& recon, const Mat<T>& truth, Mat<T>* grad = nullptr);

/// (1/(|S| d_z)) sum_s ||z3 - 3 z2 + 3 z1 - z0||^2 over latent columns laid out
/// as in SegmentBatch. When `grad` is non-null it receives dL/dz.
template <typename T>
double jerk_from_latents(const Mat<T>& z, Mat<T>* grad = nullptr);

template <typename T>
double recon_loss(const ModelState<T>& state, const SegmentBatch<T>& batch);

template <typename T>
double jerk_loss(const ModelState<T>& state, const SegmentBatch<T>& batch);

/// total = recon + lambda * jerk. With `grads` non-null, encoder and decoder
/// gradients of `total` are accumulated into it.
template <typename T>
LossParts stage1_loss(const ModelState<T>& state, const SegmentBatch<T>& batch, double lambda,
                      ModelGrads<T>* grads = nullptr);

/// sum_t ||pred(:,t) - actual(:,t)||^2 for d_z x L latent trajectories.
double ode_loss(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& actual);

} // namespace jerkrom::losses
