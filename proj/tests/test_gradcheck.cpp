// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "jerkrom/gradcheck.hpp"
#include "jerkrom/losses.hpp"
#include "testutil.hpp"

using namespace jerkrom;
using namespace jerkrom::nets;
using losses::SegmentBatch;

namespace {

SegmentBatch<double> random_batch(int nx, int segments, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  SegmentBatch<double> b;
  b.fields.resize(nx * nx, 4 * segments);
  for (Eigen::Index i = 0; i < b.fields.size(); ++i) b.fields.data()[i] = n(rng);
  b.coords = grid_coordinates(2, nx);
  return b;
}

ModelState<double> tiny_model(std::uint64_t seed = 1, Embedding emb = Embedding::affine) {
  ModelConfig c = jerkrom::testing::tiny_config();
  c.decoder.embedding = emb;
  auto m = init_model<double>(c, seed);
  jitter_biases(m, seed);
  return m;
}

/// Encoder-only objective: the jerk term with its gradient pushed through the encoder.
double jerk_objective(const ModelState<double>& s, const SegmentBatch<double>& b, ModelGrads<double>* g) {
  Encoder<double>::Cache cache;
  const Mat<double> z = s.encoder.forward(b.fields, g ? &cache : nullptr);
  Mat<double> dz;
  const double j = losses::jerk_from_latents(z, g ? &dz : nullptr);
  if (g) s.encoder.backward(dz, cache, g->encoder);
  return j;
}

/// Every entry of every block.
GradCheckOptions exhaustive() {
  GradCheckOptions o;
  o.samples_per_block = 1 << 20;
  return o;
}

} // namespace

TEST(GradCheck, TinyModelIsSmall) {
  EXPECT_LE(tiny_model().parameter_count(), 10000u);
}

TEST(GradCheck, ReconstructionLoss) {
  auto s = tiny_model();
  const auto b = random_batch(8, 1, 2);
  const auto r = check_gradients(s, [&](const ModelState<double>& st, ModelGrads<double>* g) {
    return losses::stage1_loss(st, b, 0.0, g).total;
  }, exhaustive());
  EXPECT_TRUE(r.passed()) << r.summary();
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, ReconstructionLossFourierEmbedding) {
  auto s = tiny_model(4, Embedding::fourier);
  const auto b = random_batch(8, 1, 5);
  const auto r = check_gradients(s, [&](const ModelState<double>& st, ModelGrads<double>* g) {
    return losses::stage1_loss(st, b, 0.0, g).total;
  }, exhaustive());
  EXPECT_TRUE(r.passed()) << r.summary();
}

TEST(GradCheck, JerkLoss) {
  auto s = tiny_model(2);
  const auto b = random_batch(8, 2, 3);
  const auto r = check_gradients(s, [&](const ModelState<double>& st, ModelGrads<double>* g) {
    return jerk_objective(st, b, g);
  }, exhaustive());
  EXPECT_TRUE(r.passed()) << r.summary();
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, StageOneLossWithSubsampledTargets) {
  auto s = tiny_model(3);
  auto b = random_batch(8, 2, 4);
  // Score the decoder on a scattered subset of points.
  std::vector<Eigen::Index> keep{0, 5, 9, 17, 33, 40, 63};
  Eigen::MatrixXd coords(2, static_cast<Eigen::Index>(keep.size()));
  Mat<double> targets(static_cast<Eigen::Index>(keep.size()), b.fields.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    coords.col(static_cast<Eigen::Index>(k)) = b.coords.col(keep[k]);
    targets.row(static_cast<Eigen::Index>(k)) = b.fields.row(keep[k]);
  }
  b.coords = coords;
  b.targets = targets;
  const auto r = check_gradients(s, [&](const ModelState<double>& st, ModelGrads<double>* g) {
    return losses::stage1_loss(st, b, 0.3, g).total;
  }, exhaustive());
  EXPECT_TRUE(r.passed()) << r.summary();
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, ReportNamesBlockOfWrongGradient) {
  auto s = tiny_model();
  const auto b = random_batch(8, 1, 2);
  const auto r = check_gradients(s, [&](const ModelState<double>& st, ModelGrads<double>* g) {
    const double l = losses::stage1_loss(st, b, 0.0, g).total;
    if (g) {
      const BlockInfo& bias = st.decoder.params().blocks().back();
      for (std::size_t k = 0; k < bias.size; ++k) g->decoder[bias.offset + k] *= 2.0;
    }
    return l;
  });
  EXPECT_FALSE(r.passed());
  EXPECT_EQ(r.worst_block, s.decoder.params().blocks().back().name);
  EXPECT_NE(r.summary().find(r.worst_block), std::string::npos);
}

TEST(GradCheck, BiasOnlyDecoderReproducingConstantHasZeroGradient) {
  auto s = tiny_model();
  auto& dp = s.decoder.params();
  std::fill(dp.values().begin(), dp.values().end(), 0.0);
  const BlockInfo& out_bias = dp.blocks().back();
  ASSERT_EQ(out_bias.size, 1u);
  dp.values()[out_bias.offset] = 0.75;

  auto b = random_batch(8, 1, 6);
  b.fields.setConstant(0.75);
  ModelGrads<double> g(s);
  const auto parts = losses::stage1_loss(s, b, 0.0, &g);
  EXPECT_LT(parts.total, 1e-24);
  for (double v : g.decoder) EXPECT_LT(std::abs(v), 1e-12);
  for (double v : g.encoder) EXPECT_LT(std::abs(v), 1e-12);
}
