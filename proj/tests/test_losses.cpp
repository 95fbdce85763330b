// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "jerkrom/error.hpp"
#include "jerkrom/losses.hpp"

using namespace jerkrom;
using namespace jerkrom::losses;
using nets::Mat;

namespace {

// Latent columns laid out as one segment per four columns, z(t) = f(t) per coordinate.
template <typename F>
Mat<double> segments_from(int dz, int segments, F f) {
  Mat<double> z(dz, 4 * segments);
  for (int s = 0; s < segments; ++s) {
    for (int j = 0; j < 4; ++j) {
      for (int d = 0; d < dz; ++d) z(d, 4 * s + j) = f(d, s + j);
    }
  }
  return z;
}

} // namespace

TEST(JerkLoss, ConstantSequenceIsZero) {
  const Mat<double> z = segments_from(3, 5, [](int d, int) { return 1.5 * d - 2.0; });
  EXPECT_LT(std::abs(jerk_from_latents(z)), 1e-12);
}

TEST(JerkLoss, QuadraticSequenceIsZero) {
  const Mat<double> z = segments_from(4, 3, [](int d, int t) { return 0.3 + 1.1 * d * t - 0.7 * t * t; });
  EXPECT_LT(std::abs(jerk_from_latents(z)), 1e-12);
}

TEST(JerkLoss, CubicGivesThirtySix) {
  Mat<double> z(1, 4);
  z << 0.0, 1.0, 8.0, 27.0;
  EXPECT_NEAR(jerk_from_latents(z), 36.0, 1e-9);
}

TEST(JerkLoss, AveragesOverSegmentsAndDimensions) {
  // Two segments, d_z = 2: third differences (6, 0) and (6, 6).
  Mat<double> z(2, 8);
  z << 0, 1, 8, 27, 0, 1, 8, 27,
       0, 0, 0, 0, 0, 1, 8, 27;
  EXPECT_NEAR(jerk_from_latents(z), (36.0 + 72.0) / (2.0 * 2.0), 1e-12);
}

TEST(JerkLoss, RejectsIncompleteSegments) {
  EXPECT_THROW(jerk_from_latents(Mat<double>(2, 3)), ShapeError);
  EXPECT_THROW(jerk_from_latents(Mat<double>(2, 6)), ShapeError);
}

TEST(JerkLoss, InvariantUnderAddedQuadratic) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  Mat<double> z(5, 12);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = n(rng);
  const double base = jerk_from_latents(z);
  Mat<double> shifted = z;
  for (int s = 0; s < 3; ++s) {
    for (int j = 0; j < 4; ++j) {
      for (int d = 0; d < 5; ++d) shifted(d, 4 * s + j) += 2.0 - 0.5 * d * j + 0.25 * (d + 1) * j * j;
    }
  }
  EXPECT_NEAR(jerk_from_latents(shifted), base, 1e-10 * std::max(1.0, base));
}

TEST(JerkLoss, ScalesQuadraticallyWithLatentScale) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  Mat<double> z(3, 8);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = n(rng);
  const double base = jerk_from_latents(z);
  for (double alpha : {0.5, 3.0, -2.0}) {
    EXPECT_NEAR(jerk_from_latents<double>(alpha * z), alpha * alpha * base, 1e-10 * alpha * alpha * base);
  }
}

TEST(JerkLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  Mat<double> z(3, 8);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = n(rng);
  Mat<double> g;
  jerk_from_latents(z, &g);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    Mat<double> up = z, down = z;
    up.data()[i] += 1e-6;
    down.data()[i] -= 1e-6;
    const double fd = (jerk_from_latents(up) - jerk_from_latents(down)) / 2e-6;
    EXPECT_NEAR(g.data()[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(ReconLoss, PerfectReconstructionIsZero) {
  const Mat<double> u = Mat<double>::Random(16, 8);
  EXPECT_EQ(recon_from_outputs<double>(u, u), 0.0);
}

TEST(ReconLoss, ConstantOffsetGivesSquare) {
  const Mat<double> u = Mat<double>::Random(16, 8);
  const double c = 0.37;
  const Mat<double> r = u.array() + c;
  EXPECT_NEAR(recon_from_outputs<double>(r, u), c * c, 1e-14);
}

TEST(ReconLoss, InvariantToSegmentPermutation) {
  const Mat<double> u = Mat<double>::Random(10, 12);
  const Mat<double> r = Mat<double>::Random(10, 12);
  Mat<double> up(10, 12), rp(10, 12);
  const int perm[3] = {2, 0, 1};
  for (int s = 0; s < 3; ++s) {
    up.middleCols(4 * s, 4) = u.middleCols(4 * perm[s], 4);
    rp.middleCols(4 * s, 4) = r.middleCols(4 * perm[s], 4);
  }
  EXPECT_NEAR(recon_from_outputs<double>(rp, up), recon_from_outputs<double>(r, u), 1e-15);
}

TEST(ReconLoss, ShapeMismatchThrows) {
  EXPECT_THROW(recon_from_outputs<double>(Mat<double>(3, 4), Mat<double>(4, 4)), ShapeError);
}

TEST(Stage1Loss, CombinesComponents) {
  nets::ModelConfig cfg;
  cfg.encoder.nx = 8;
  cfg.encoder.widths = {2, 4};
  cfg.encoder.blocks = {1, 1};
  cfg.encoder.stem_width = 2;
  cfg.decoder.hidden_layers = 1;
  cfg.decoder.width = 4;
  cfg.odefunc.hidden_layers = 1;
  cfg.odefunc.width = 4;
  for (auto* dz : {&cfg.encoder.latent_dim, &cfg.decoder.latent_dim, &cfg.odefunc.latent_dim}) *dz = 3;
  const auto model = nets::init_model<double>(cfg, 1);
  SegmentBatch<double> batch;
  batch.fields = Mat<double>::Random(64, 8);
  batch.coords = nets::grid_coordinates(2, 8);
  const double r = recon_loss(model, batch);
  const double j = jerk_loss(model, batch);
  const LossParts zero = stage1_loss(model, batch, 0.0);
  EXPECT_EQ(zero.total, zero.recon);
  EXPECT_EQ(zero.recon, r);
  const LossParts half = stage1_loss(model, batch, 0.5);
  EXPECT_DOUBLE_EQ(half.total, r + 0.5 * j);
  EXPECT_EQ(half.jerk, j);
  EXPECT_THROW(stage1_loss(model, batch, -0.1), ConfigError);
}

TEST(OdeLoss, IdenticalTrajectoriesGiveZero) {
  const Eigen::MatrixXd z = Eigen::MatrixXd::Random(4, 7);
  EXPECT_EQ(ode_loss(z, z), 0.0);
}

TEST(OdeLoss, SingleStepResidual) {
  Eigen::MatrixXd a(2, 1), b(2, 1);
  a << 0.3, -0.4;
  b << 0.0, 0.0;
  EXPECT_NEAR(ode_loss(a, b), 0.25, 1e-15);
}

TEST(OdeLoss, LengthMismatchThrows) {
  EXPECT_THROW(ode_loss(Eigen::MatrixXd(2, 3), Eigen::MatrixXd(2, 4)), ShapeError);
}
