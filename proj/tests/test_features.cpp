#include <cmath>

#include <gtest/gtest.h>

#include "seqloc/features.hpp"
#include "seqloc/random.hpp"

using namespace seqloc;

namespace {

FeatureMap random_map(int h, int w, int dim, std::uint64_t seed) {
  auto rng = make_rng(seed);
  FeatureMap m(h, w, dim);
  for (Eigen::Index j = 0; j < m.pixel_count(); ++j) {
    for (int c = 0; c < dim; ++c) m.descriptors(j, c) = gaussian(rng);
    m.scores(j) = uniform(rng, 0, 1);
    m.logits(j) = gaussian(rng);
  }
  return m;
}

}  // namespace

TEST(Features, UniformLogitsGiveCellCentroid) {
  FeatureMap m(16, 16, 2);
  const auto kps = detect_keypoints(m, 8);
  ASSERT_EQ(kps.size(), 4u);
  EXPECT_LT((kps[0].q - Vec2(3.5, 3.5)).norm(), 1e-12);
  EXPECT_LT((kps[3].q - Vec2(11.5, 11.5)).norm(), 1e-12);
}

TEST(Features, LogitSpikeDominatesCell) {
  FeatureMap m(16, 16, 2);
  m.logits(m.index(5, 2)) = 50;
  const auto kps = detect_keypoints(m, 16);
  ASSERT_EQ(kps.size(), 1u);
  EXPECT_LT((kps[0].q - Vec2(5, 2)).norm(), 0.01);
}

TEST(Features, CellCounting) {
  EXPECT_EQ(detect_keypoints(FeatureMap(48, 64, 2), 16).size(), 12u);
  EXPECT_EQ(detect_keypoints(FeatureMap(96, 128, 2), 16).size(), 48u);
  EXPECT_THROW(detect_keypoints(FeatureMap(8, 8, 2), 0), Error);
}

TEST(Features, ZnccProperties) {
  Eigen::VectorXd d(4);
  d << 1, 3, -2, 0.5;
  EXPECT_NEAR(zncc(d, d), 1.0, 1e-12);
  EXPECT_NEAR(zncc(d, -d), -1.0, 1e-12);
  EXPECT_NEAR(zncc(d, 2.5 * d.array() + 7.0), 1.0, 1e-9);
  EXPECT_EQ(zncc(d, Eigen::VectorXd::Constant(4, 3.0)), 0.0);
  EXPECT_THROW(zncc(d, Eigen::VectorXd::Zero(3)), Error);
}

TEST(Features, ZnccBoundedOnRandomInputs) {
  auto rng = make_rng(11);
  for (int i = 0; i < 500; ++i) {
    Eigen::VectorXd a(8), b(8);
    for (int c = 0; c < 8; ++c) {
      a(c) = gaussian(rng);
      b(c) = gaussian(rng);
    }
    const double z = zncc(a, b);
    EXPECT_GE(z, -1.0);
    EXPECT_LE(z, 1.0);
    EXPECT_NEAR(z, zncc(b, a), 1e-15);
  }
}

TEST(Features, BilinearSampleExamples) {
  FeatureMap m(2, 2, 2);
  m.descriptors.col(0) << 1, 2, 3, 4;
  m.descriptors.col(1) << 0, 0, 0, 8;
  m.scores << 0.1, 0.2, 0.3, 0.4;
  const auto mid = bilinear_sample(m, {0.5, 0.5});
  EXPECT_NEAR(mid.descriptor(0), 2.5, 1e-15);
  EXPECT_NEAR(mid.descriptor(1), 2.0, 1e-15);
  EXPECT_NEAR(mid.score, 0.25, 1e-15);
  const auto corner = bilinear_sample(m, {1, 0});
  EXPECT_EQ(corner.descriptor(0), 2.0);
  EXPECT_EQ(corner.score, 0.2);
  EXPECT_THROW(bilinear_sample(m, {1.5, 0}), Error);
}

TEST(Features, BilinearSampleOfConstantMap) {
  FeatureMap m(5, 7, 3);
  m.descriptors.setConstant(0.7);
  m.scores.setConstant(0.3);
  auto rng = make_rng(12);
  for (int i = 0; i < 50; ++i) {
    const auto s = bilinear_sample(m, {uniform(rng, 0, 6), uniform(rng, 0, 4)});
    EXPECT_NEAR(s.descriptor.maxCoeff(), 0.7, 1e-12);
    EXPECT_NEAR(s.descriptor.minCoeff(), 0.7, 1e-12);
    EXPECT_NEAR(s.score, 0.3, 1e-12);
  }
}

TEST(Features, DisparityIgnoresEmptyNeighbours) {
  DisparityMap d(2, 2);
  d.at(0, 0) = 10;
  d.at(1, 0) = 20;
  EXPECT_NEAR(sample_disparity(d, {0.5, 0.5}).value, 15.0, 1e-12);
  EXPECT_NEAR(sample_disparity(d, {0.25, 0.9}).value, 12.5, 1e-12);
  EXPECT_LE(sample_disparity(DisparityMap(2, 2), {0.5, 0.5}).value, 0.0);
}

TEST(Features, DisparityGradientMatchesDifferences) {
  DisparityMap d(3, 3);
  for (int v = 0; v < 3; ++v)
    for (int u = 0; u < 3; ++u) d.at(u, v) = static_cast<float>(1 + u * 2 + v * v);
  d.at(2, 2) = 0;
  const Vec2 q(1.3, 1.6);
  const auto s = sample_disparity(d, q);
  const double h = 1e-6;
  const double gu = (sample_disparity(d, q + Vec2(h, 0)).value - sample_disparity(d, q - Vec2(h, 0)).value) / (2 * h);
  const double gv = (sample_disparity(d, q + Vec2(0, h)).value - sample_disparity(d, q - Vec2(0, h)).value) / (2 * h);
  EXPECT_NEAR(s.gradient.x(), gu, 1e-6);
  EXPECT_NEAR(s.gradient.y(), gv, 1e-6);
}

TEST(Features, SoftMatchOfIdenticalTargetsIsCentroid) {
  FeatureMap tgt(6, 10, 3);
  for (Eigen::Index j = 0; j < tgt.pixel_count(); ++j) tgt.descriptors.row(j) << 1, 2, 4;
  Keypoint kp;
  kp.descriptor = Eigen::Vector3d(0, 1, 0);
  const auto m = soft_match(kp, tgt, 100);
  EXPECT_LT((m.q - Vec2(4.5, 2.5)).norm(), 1e-9);
  EXPECT_NEAR(m.weights.sum(), 1.0, 1e-12);
}

TEST(Features, SoftMatchOneHotAtTau100) {
  // Target pixel (7, 3) correlates perfectly with the source; every other pixel anti-correlates.
  const int w = 16, h = 12;
  FeatureMap tgt(h, w, 2);
  for (Eigen::Index j = 0; j < tgt.pixel_count(); ++j) tgt.descriptors.row(j) << 1, 0;
  tgt.descriptors.row(tgt.index(7, 3)) << 0, 1;
  Keypoint kp;
  kp.descriptor = Eigen::Vector2d(0, 1);
  const auto m = soft_match(kp, tgt, 100);
  EXPECT_LT((m.q - Vec2(7, 3)).norm(), 0.01);
}

TEST(Features, SoftMatchConvergesToArgmaxAtLargeTau) {
  int checked = 0;
  for (std::uint64_t seed = 0; checked < 10 && seed < 100; ++seed) {
    const auto tgt = random_map(12, 16, 32, 100 + seed);
    const auto src = random_map(1, 1, 32, 200 + seed);
    Keypoint kp;
    kp.descriptor = src.descriptors.row(0).transpose();
    const auto m = soft_match(kp, tgt, 1e3);
    Eigen::Index best = 0;
    const double top = m.zncc.maxCoeff(&best);
    Eigen::VectorXd rest = m.zncc;
    rest(best) = -1;
    if (top - rest.maxCoeff() < 0.02) continue;  // maximizer not unique enough
    const Vec2 argmax(static_cast<double>(best % 16), static_cast<double>(best / 16));
    EXPECT_LT((m.q - argmax).norm(), 0.05) << "seed " << seed;
    ++checked;
  }
  EXPECT_EQ(checked, 10);
}

TEST(Features, BatchedSoftMatchAgreesWithSingle) {
  const auto tgt = random_map(10, 12, 6, 300);
  const auto src = random_map(2, 3, 6, 301);
  const MatchTarget target(tgt);
  const auto all = soft_match_all(src.descriptors, target, 20);
  for (Eigen::Index i = 0; i < src.pixel_count(); ++i) {
    Keypoint kp;
    kp.descriptor = src.descriptors.row(i).transpose();
    EXPECT_LT((soft_match(kp, target, 20).q - all[static_cast<std::size_t>(i)]).norm(), 1e-9);
  }
}

TEST(Features, SlfmRoundTrip) {
  const auto m = random_map(4, 5, 3, 400);
  const auto path = std::filesystem::temp_directory_path() / "seqloc_test_map.slfm";
  write_slfm(m, path);
  const auto back = read_slfm(path);
  EXPECT_EQ(back.height, 4);
  EXPECT_EQ(back.width, 5);
  EXPECT_LT((back.descriptors - m.descriptors).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((back.scores - m.scores).cwiseAbs().maxCoeff(), 1e-6);
  std::filesystem::resize_file(path, 30);
  try {
    read_slfm(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::CorruptDataset);
  }
  std::filesystem::remove(path);
}
