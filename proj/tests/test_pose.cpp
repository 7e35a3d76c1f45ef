#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "seqloc/pose.hpp"
#include "seqloc/random.hpp"
#include "seqloc/simworld.hpp"

using namespace seqloc;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Vec3 random_point(Rng& rng) { return {uniform(rng, -2, 2), uniform(rng, -1, 1), uniform(rng, 2, 8)}; }

MatchedPair make_pair(const Vec3& s, const Vec3& t) {
  MatchedPair p;
  p.p_s = s;
  p.p_t = t;
  p.w = 1;
  return p;
}

struct PairFixture {
  World world;
  RenderedFrame src, tgt;
  Transform t_ts;
};

// Two renders of the same world: source on the route, target 0.5 m ahead and yawed 5 degrees.
PairFixture render_pair(const Transform& motion) {
  SimConfig cfg;
  PairFixture f;
  f.world = generate_world(cfg, 42);
  const auto pose_s = route_pose(f.world, 8.0, 0, 0);
  const auto pose_t = compose(pose_s, motion);
  f.src = render_frame(f.world, pose_s, 0.0, cfg.camera, 1, render_options(cfg));
  f.tgt = render_frame(f.world, pose_t, 0.0, cfg.camera, 2, render_options(cfg));
  f.t_ts = compose(inverse(pose_t), pose_s);
  return f;
}

// Same geometry, but every pixel gets an independent random descriptor.
FeatureMap with_noise_descriptors(FeatureMap map, std::uint64_t seed) {
  auto rng = make_rng(seed);
  for (Eigen::Index j = 0; j < map.pixel_count(); ++j)
    for (int c = 0; c < map.dim(); ++c) map.descriptors(j, c) = gaussian(rng);
  return map;
}

}  // namespace

TEST(Pose, MatchWeightExamples) {
  Eigen::Vector4d a(1, -1, 0, 0), b(0, 0, 1, -1);
  EXPECT_NEAR(match_weight(a, a, 1, 1), 1.0, 1e-12);
  EXPECT_NEAR(match_weight(a, -a, 0.7, 0.9), 0.0, 1e-12);
  EXPECT_NEAR(match_weight(a, b, 0.5, 0.8), 0.2, 1e-12);
}

TEST(Pose, AlignmentOfIdenticalSetsIsIdentity) {
  auto rng = make_rng(20);
  std::vector<Vec3> pts;
  std::vector<double> w;
  for (int i = 0; i < 10; ++i) {
    pts.push_back(random_point(rng));
    w.push_back(uniform(rng, 0.1, 2));
  }
  const auto t = weighted_alignment(pts, pts, w);
  EXPECT_LT((t.matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Pose, AlignmentRecoversUnitSquareMotion) {
  const auto truth = Transform::from_axis_angle({0, 0, std::numbers::pi / 2}, {1, 0, 0});
  std::vector<Vec3> src{{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}}, tgt;
  for (const auto& p : src) tgt.push_back(apply(truth, p));
  const auto t = weighted_alignment(src, tgt, {1, 1, 1, 1});
  EXPECT_LT(rotation_angle(t.rotation.transpose() * truth.rotation), 1e-9);
  EXPECT_LT((t.translation - truth.translation).norm(), 1e-9);
}

TEST(Pose, AlignmentRecoversRandomMotions) {
  auto rng = make_rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const auto truth = Transform::from_axis_angle(Vec3(gaussian(rng), gaussian(rng), gaussian(rng)),
                                                  Vec3(gaussian(rng), gaussian(rng), gaussian(rng)));
    std::vector<Vec3> src, tgt;
    std::vector<double> w;
    for (int i = 0; i < 3 + trial % 20; ++i) {
      src.push_back(random_point(rng));
      tgt.push_back(apply(truth, src.back()));
      w.push_back(uniform(rng, 0.1, 1));
    }
    const auto t = weighted_alignment(src, tgt, w);
    EXPECT_LT(rotation_angle(t.rotation.transpose() * truth.rotation), 1e-9);
    EXPECT_LT((t.translation - truth.translation).norm(), 1e-9);
  }
}

TEST(Pose, AlignmentRejectsDegenerateInputs) {
  auto expect_degenerate = [](const std::vector<Vec3>& s, const std::vector<double>& w) {
    try {
      weighted_alignment(s, s, w);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::DegenerateGeometry);
    }
  };
  expect_degenerate({{0, 0, 1}, {1, 0, 1}}, {1, 1});
  expect_degenerate({{0, 0, 1}, {1, 0, 1}, {2, 0, 1}}, {1, 1, 1});
  expect_degenerate({{0, 0, 1}, {1, 0, 1}, {0, 1, 1}}, {1, 1, 0});
}

TEST(Pose, KeypointLossExamples) {
  const auto t = Transform::from_axis_angle({0.1, 0.2, 0.3}, {1, 2, 3});
  std::vector<MatchedPair> pairs;
  auto rng = make_rng(22);
  for (int i = 0; i < 5; ++i) {
    const Vec3 p = random_point(rng);
    pairs.push_back(make_pair(p, apply(t, p)));
  }
  EXPECT_NEAR(keypoint_loss(t, pairs), 0.0, 1e-20);
  std::vector<MatchedPair> one{make_pair({1, 2, 3}, {1.1, 2, 3})};
  EXPECT_NEAR(keypoint_loss(Transform::identity(), one), 0.01, 1e-15);
  one[0].inlier = false;
  EXPECT_EQ(keypoint_loss(Transform::identity(), one), 0.0);
}

TEST(Pose, RansacFlagsConsistentPairs) {
  const auto t = Transform::from_axis_angle({0, 0.1, 0}, {0.2, 0, 0.5});
  auto rng = make_rng(23);
  std::vector<MatchedPair> pairs;
  for (int i = 0; i < 20; ++i) {
    const Vec3 p = random_point(rng);
    pairs.push_back(make_pair(p, apply(t, p)));
  }
  const auto r = ransac(pairs, 100, 0.01, 5);
  EXPECT_EQ(r.count, 20);
  EXPECT_LT((r.model.matrix() - t.matrix()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Pose, RansacWithThirtyPercentOutliers) {
  const auto t = Transform::from_axis_angle({0.05, -0.1, 0.02}, {0.3, -0.1, 0.4});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto rng = make_rng(1000 + seed);
    std::vector<MatchedPair> pairs;
    std::vector<bool> truth;
    for (int i = 0; i < 50; ++i) {
      const Vec3 p = random_point(rng);
      const bool inlier = i % 10 >= 3;
      Vec3 q = apply(t, p);
      if (inlier)
        q += Vec3(gaussian(rng, 0.01), gaussian(rng, 0.01), gaussian(rng, 0.01));
      else
        q = random_point(rng);
      pairs.push_back(make_pair(p, q));
      truth.push_back(inlier);
    }
    const auto r = ransac(pairs, 500, 0.01, seed);
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      tp += r.inliers[i] && truth[i];
      fp += r.inliers[i] && !truth[i];
      fn += !r.inliers[i] && truth[i];
    }
    EXPECT_GE(tp / double(tp + fn), 0.95) << "seed " << seed;
    EXPECT_GE(tp / double(tp + fp), 0.95) << "seed " << seed;
    EXPECT_EQ(ransac(pairs, 500, 0.01, seed).inliers, r.inliers);
  }
}

TEST(Pose, RansacNeedsThreePairs) {
  std::vector<MatchedPair> two{make_pair({0, 0, 1}, {0, 0, 1}), make_pair({1, 0, 1}, {1, 0, 1})};
  try {
    ransac(two, 10, 0.01, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NoConsensus);
  }
}

TEST(Pose, SameFrameGivesIdentity) {
  const auto f = render_pair(Transform::identity());
  const auto map = with_noise_descriptors(f.src.gt_map, 25);
  const StereoCamera cam;
  const auto est = estimate_pose(map, f.src.disparity, map, f.src.disparity, cam, PoseParams{});
  EXPECT_LT((est.t_ts.matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT(est.loss, 1e-9);
  EXPECT_GE(est.inlier_count, 3);
}

TEST(Pose, RecoversSimulatedMotion) {
  const auto f = render_pair(Transform::from_axis_angle({0, 5 * kDeg, 0}, {0, 0, 0.5}));
  const StereoCamera cam;
  const auto est = estimate_pose(f.src.gt_map, f.src.disparity, f.tgt.gt_map, f.tgt.disparity, cam, PoseParams{});
  const auto err = compose(inverse(f.t_ts), est.t_ts);
  EXPECT_LT(rotation_angle(err.rotation) / kDeg, 0.2);
  EXPECT_LT(err.translation.norm(), 0.02);
}

TEST(Pose, UnrelatedTargetHasNoConsensus) {
  const auto f = render_pair(Transform::identity());
  const auto noise = with_noise_descriptors(f.src.gt_map, 24);
  const StereoCamera cam;
  try {
    estimate_pose(f.src.gt_map, f.src.disparity, noise, f.src.disparity, cam, PoseParams{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NoConsensus);
  }
}
