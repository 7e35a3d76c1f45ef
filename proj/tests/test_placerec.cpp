#include <cmath>

#include <gtest/gtest.h>

#include "seqloc/gt.hpp"
#include "seqloc/placerec.hpp"
#include "seqloc/random.hpp"

using namespace seqloc;

namespace {

const Simulation& shared_sim() {
  static const Simulation sim = [] {
    SimConfig c;
    c.experiences = 3;
    return simulate(c, 42);
  }();
  return sim;
}

Eigen::MatrixXd random_image(int h, int w, std::uint64_t seed) {
  auto rng = make_rng(seed);
  Eigen::MatrixXd m(h, w);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) m(v, u) = uniform(rng, 0.1, 0.6);
  return m;
}

}  // namespace

TEST(PlaceRec, ConstantImagePreprocessesToZero) {
  const auto out = preprocess(Eigen::MatrixXd::Constant(48, 64, 0.4), 32, 24, 8);
  EXPECT_LE(out.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PlaceRec, PreprocessIsAffineInvariant) {
  const auto img = random_image(48, 64, 30);
  const Eigen::MatrixXd brighter = (img.array() * 1.5 + 20.0).matrix();
  EXPECT_LT((preprocess(img, 32, 24, 8) - preprocess(brighter, 32, 24, 8)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(PlaceRec, PatchesAreNormalized) {
  const auto out = preprocess(random_image(48, 64, 31), 32, 24, 8);
  ASSERT_EQ(out.rows(), 24);
  ASSERT_EQ(out.cols(), 32);
  int patches = 0;
  for (int py = 0; py < 24; py += 8)
    for (int px = 0; px < 32; px += 8) {
      const auto b = out.block(py, px, 8, 8);
      const double mean = b.mean();
      EXPECT_LT(std::abs(mean), 1e-9);
      EXPECT_LT(std::abs(std::sqrt((b.array() - mean).square().mean()) - 1.0), 1e-6);
      ++patches;
    }
  EXPECT_EQ(patches, 12);
  EXPECT_THROW(preprocess(random_image(48, 64, 32), 30, 24, 8), Error);
}

TEST(PlaceRec, AreaDownsampleAverages) {
  Eigen::MatrixXd img(2, 4);
  img << 1, 3, 5, 7, 1, 3, 5, 7;
  const auto out = area_downsample(img, 2, 1);
  EXPECT_DOUBLE_EQ(out(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(out(0, 1), 6.0);
}

TEST(PlaceRec, SelfSimilarityOnDiagonal) {
  const auto& e = shared_sim().dataset.experiences[0];
  const auto d = difference_matrix(e, e, SeqSlamParams{});
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    Eigen::Index j = 0;
    d.values.row(i).minCoeff(&j);
    EXPECT_EQ(j, i);
  }
}

TEST(PlaceRec, GlobalGainKeepsDiagonal) {
  const auto& e = shared_sim().dataset.experiences[0];
  Experience bright = e;
  for (auto& f : bright.frames)
    for (auto& px : f.left.pixels) px = static_cast<std::uint8_t>(std::min(255.0, std::round(px * 1.3)));
  const auto d = difference_matrix(bright, e, SeqSlamParams{});
  int hits = 0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    Eigen::Index j = 0;
    d.values.row(i).minCoeff(&j);
    hits += j == i;
  }
  EXPECT_GE(hits, 0.95 * static_cast<double>(d.rows()));
}

TEST(PlaceRec, ContrastEnhanceOfConstantIsZero) {
  DifferenceMatrix d;
  d.values = Eigen::MatrixXd::Constant(12, 9, 3.0);
  EXPECT_EQ(contrast_enhance(d, 3).values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(PlaceRec, ContrastEnhanceAmplifiesSpike) {
  DifferenceMatrix d;
  d.values = Eigen::MatrixXd::Constant(11, 4, 1.0);
  d.values(5, 2) = 0.5;
  d.values(4, 2) = 0.95;
  d.values(6, 2) = 0.95;
  const auto out = contrast_enhance(d, 5);
  const double raw_gap = d.values(4, 2) - d.values(5, 2);
  const double enhanced_gap = out.values(4, 2) - out.values(5, 2);
  EXPECT_GT(enhanced_gap, raw_gap);
  EXPECT_EQ(out.values.minCoeff(), out.values(5, 2));
}

TEST(PlaceRec, IdentityLikeMatrixMatchesDiagonal) {
  DifferenceMatrix d;
  d.values = Eigen::MatrixXd::Ones(20, 20) - Eigen::MatrixXd::Identity(20, 20);
  const auto m = match_sequences(d, 0.8, 1.25, 7, 11);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(m[i].ref_frame, static_cast<int>(i));
  EXPECT_THROW(match_sequences(d, 0.8, 1.25, 7, 10), Error);
  d.values = Eigen::MatrixXd::Ones(5, 5);
  try {
    match_sequences(d, 0.8, 1.25, 7, 11);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::SequenceTooShort);
  }
}

TEST(PlaceRec, NeighbourExperiencesAlign) {
  const auto& ds = shared_sim().dataset;
  const auto& q = ds.experiences[1];
  const auto& r = ds.experiences[0];
  const auto raw = seqslam(q, r, SeqSlamParams{});
  const auto gt = gt_alignment(q, r);
  int ok = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) ok += std::abs(raw[i].ref_frame - gt[i]) <= 2;
  EXPECT_GE(ok, 0.95 * static_cast<double>(raw.size()));
}

TEST(PlaceRec, ReversedReferenceScoresWorse) {
  const auto& ds = shared_sim().dataset;
  const auto& q = ds.experiences[1];
  Experience reversed = ds.experiences[0];
  std::reverse(reversed.frames.begin(), reversed.frames.end());
  auto mean_score = [](const RawMatchList& m) {
    double s = 0;
    for (const auto& x : m) s += x.score;
    return s / static_cast<double>(m.size());
  };
  SeqSlamParams p;
  p.contrast_enhance = false;
  EXPECT_GT(mean_score(seqslam(q, reversed, p)), mean_score(seqslam(q, ds.experiences[0], p)));
}
