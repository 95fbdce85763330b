// SPDX-License-Identifier: Apache-2.0
#include "jerkrom/losses.hpp"

#include "jerkrom/error.hpp"

namespace jerkrom::losses {

template <typename T>
void SegmentBatch<T>::validate() const {
  if (fields.cols() < 4 || fields.cols() % 4 != 0) {
    throw ShapeError("a segment batch needs four snapshots per segment, got " +
                     std::to_string(fields.cols()) + " columns");
  }
  const Mat<T>& t = target();
  if (t.rows() != coords.cols() || t.cols() != fields.cols()) {
    throw ShapeError("segment targets hold " + std::to_string(t.rows()) + " values but " +
                     std::to_string(coords.cols()) + " coordinates were given");
  }
}

template <typename T>
double recon_from_outputs(const Mat<T>& recon, const Mat<T>& truth, Mat<T>* grad) {
  if (recon.rows() != truth.rows() || recon.cols() != truth.cols()) {
    throw ShapeError("reconstruction and target shapes differ");
  }
  const Mat<T> diff = recon - truth;
  const double n = static_cast<double>(diff.size());
  if (grad) *grad = diff * static_cast<T>(2.0 / n);
  return diff.template cast<double>().squaredNorm() / n;
}

template <typename T>
double jerk_from_latents(const Mat<T>& z, Mat<T>* grad) {
  if (z.cols() < 4 || z.cols() % 4 != 0) {
    throw ShapeError("jerk needs four latent states per segment, got " + std::to_string(z.cols()));
  }
  const Eigen::Index S = z.cols() / 4;
  const double norm = static_cast<double>(S) * static_cast<double>(z.rows());
  if (grad) grad->resize(z.rows(), z.cols());
  double total = 0.0;
  for (Eigen::Index s = 0; s < S; ++s) {
    const Eigen::Index c = 4 * s;
    const auto j = (z.col(c + 3) - T(3) * z.col(c + 2) + T(3) * z.col(c + 1) - z.col(c)).eval();
    total += j.template cast<double>().squaredNorm();
    if (grad) {
      const T g = static_cast<T>(2.0 / norm);
      grad->col(c) = -g * j;
      grad->col(c + 1) = T(3) * g * j;
      grad->col(c + 2) = T(-3) * g * j;
      grad->col(c + 3) = g * j;
    }
  }
  return total / norm;
}

template <typename T>
double recon_loss(const ModelState<T>& state, const SegmentBatch<T>& batch) {
  batch.validate();
  const Mat<T> z = state.encoder.forward(batch.fields);
  return recon_from_outputs<T>(state.decoder.forward(z, batch.coords), batch.target());
}

template <typename T>
double jerk_loss(const ModelState<T>& state, const SegmentBatch<T>& batch) {
  batch.validate();
  return jerk_from_latents<T>(state.encoder.forward(batch.fields));
}

template <typename T>
LossParts stage1_loss(const ModelState<T>& state, const SegmentBatch<T>& batch, double lambda,
                      ModelGrads<T>* grads) {
  if (!(lambda >= 0.0)) throw ConfigError("jerk coefficient must be >= 0", "train.lambda");
  batch.validate();
  LossParts parts;
  if (!grads) {
    const Mat<T> z = state.encoder.forward(batch.fields);
    parts.recon = recon_from_outputs<T>(state.decoder.forward(z, batch.coords), batch.target());
    parts.jerk = jerk_from_latents<T>(z);
    parts.total = parts.recon + lambda * parts.jerk;
    return parts;
  }
  typename nets::Encoder<T>::Cache ecache;
  typename nets::Decoder<T>::Cache dcache;
  const Mat<T> z = state.encoder.forward(batch.fields, &ecache);
  const Mat<T> u = state.decoder.forward(z, batch.coords, &dcache);
  Mat<T> du, dzj;
  parts.recon = recon_from_outputs<T>(u, batch.target(), &du);
  parts.jerk = jerk_from_latents<T>(z, &dzj);
  parts.total = parts.recon + lambda * parts.jerk;
  Mat<T> dz = state.decoder.backward(du, dcache, grads->decoder);
  if (lambda != 0.0) dz += static_cast<T>(lambda) * dzj;
  state.encoder.backward(dz, ecache, grads->encoder);
  return parts;
}

double ode_loss(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& actual) {
  if (predicted.rows() != actual.rows() || predicted.cols() != actual.cols()) {
    throw ShapeError("latent trajectories differ in shape: " + std::to_string(predicted.rows()) + "x" +
                     std::to_string(predicted.cols()) + " vs " + std::to_string(actual.rows()) + "x" +
                     std::to_string(actual.cols()));
  }
  return (predicted - actual).squaredNorm();
}

#define JERKROM_INSTANTIATE(T)                                                                   \
  template struct SegmentBatch<T>;                                                               \
  template double recon_from_outputs<T>(const Mat<T>&, const Mat<T>&, Mat<T>*);                  \
  template double jerk_from_latents<T>(const Mat<T>&, Mat<T>*);                                  \
  template double recon_loss<T>(const ModelState<T>&, const SegmentBatch<T>&);                   \
  template double jerk_loss<T>(const ModelState<T>&, const SegmentBatch<T>&);                    \
  template LossParts stage1_loss<T>(const ModelState<T>&, const SegmentBatch<T>&, double,        \
                                    ModelGrads<T>*);

JERKROM_INSTANTIATE(float)
JERKROM_INSTANTIATE(double)

} // namespace jerkrom::losses
