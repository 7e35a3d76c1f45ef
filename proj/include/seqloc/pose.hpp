#pragma once

// Relative pose from two feature maps: soft matches, stereo depth, RANSAC and weighted SVD.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "seqloc/error.hpp"
#include "seqloc/feature_map.hpp"
#include "seqloc/features.hpp"
#include "seqloc/geometry.hpp"
#include "seqloc/random.hpp"

namespace seqloc {

struct MatchedPair {
  Vec3 p_s = Vec3::Zero();
  Vec3 p_t = Vec3::Zero();
  Eigen::VectorXd d_s;
  Eigen::VectorXd d_t;
  double s_s = 0;
  double s_t = 0;
  double w = 0;
  bool inlier = true;
  int keypoint = -1;  // index into the source keypoint list
  Vec2 q_s = Vec2::Zero();
  Vec2 q_t = Vec2::Zero();
};

struct PoseParams {
  int cell = 16;
  double tau = 100.0;
  int stride = 1;
  int ransac_iters = 500;
  double inlier_sq = 0.01;
  double d_min = 0.5;
  int min_inliers = 3;  // smaller consensus sets are reported as NoConsensus
  std::uint64_t seed = 42;

  void validate() const {
    if (cell < 1 || !(tau > 0) || stride < 1 || ransac_iters < 1 || !(inlier_sq > 0) || !(d_min >= 0) || min_inliers < 3)
      throw Error(Errc::InvalidConfig, "pose parameters out of range");
  }
};

struct PoseEstimate {
  Transform t_ts;
  int inlier_count = 0;
  double loss = 0;
  std::vector<double> residuals;  // squared metres, one per pair
  std::vector<MatchedPair> pairs;
};

/// w = (zncc + 1) / 2 * s_s * s_t
inline double match_weight(const Eigen::VectorXd& d_s, const Eigen::VectorXd& d_t, double s_s, double s_t) {
  return 0.5 * (zncc(d_s, d_t) + 1.0) * s_s * s_t;
}

/// Minimizer of sum_i w_i |R p_s + t - p_t|^2 over SE(3).
inline Transform weighted_alignment(const std::vector<Vec3>& src, const std::vector<Vec3>& tgt,
                                    const std::vector<double>& w) {
  if (src.size() != tgt.size() || src.size() != w.size()) throw Error(Errc::DegenerateGeometry, "size mismatch");
  double mass = 0;
  int support = 0;
  for (double wi : w) {
    if (!(wi >= 0) || !std::isfinite(wi)) throw Error(Errc::DegenerateGeometry, "weights must be finite and >= 0");
    mass += wi;
    support += wi > 0;
  }
  if (support < 3 || !(mass > 0)) throw Error(Errc::DegenerateGeometry, "need >= 3 weighted pairs");

  Vec3 cs = Vec3::Zero(), ct = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += w[i] * src[i];
    ct += w[i] * tgt[i];
  }
  cs /= mass;
  ct /= mass;
  Mat3 cov = Mat3::Zero(), h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3 a = src[i] - cs;
    cov += w[i] * a * a.transpose();
    h += w[i] * a * (tgt[i] - ct).transpose();
  }
  cov /= mass;
  const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov, Eigen::EigenvaluesOnly);
  const Vec3 ev = eig.eigenvalues();  // ascending
  if (!(ev(2) > 1e-20) || !(ev(1) > 1e-12 * ev(2)))
    throw Error(Errc::DegenerateGeometry, "source points are coincident or collinear");

  const Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 u = svd.matrixU(), v = svd.matrixV();
  Mat3 s = Mat3::Identity();
  s(2, 2) = (v * u.transpose()).determinant() < 0 ? -1.0 : 1.0;
  Transform t;
  t.rotation = v * s * u.transpose();
  t.translation = ct - t.rotation * cs;
  return t;
}

inline Transform weighted_alignment(const std::vector<MatchedPair>& pairs) {
  std::vector<Vec3> s, t;
  std::vector<double> w;
  for (const auto& p : pairs) {
    s.push_back(p.p_s);
    t.push_back(p.p_t);
    w.push_back(p.w);
  }
  return weighted_alignment(s, t, w);
}

inline double pair_residual(const Transform& t, const MatchedPair& p) { return (apply(t, p.p_s) - p.p_t).squaredNorm(); }

/// Sum of squared 3D errors over inlier pairs.
inline double keypoint_loss(const Transform& t, const std::vector<MatchedPair>& pairs) {
  double loss = 0;
  for (const auto& p : pairs)
    if (p.inlier) loss += pair_residual(t, p);
  return loss;
}

struct RansacResult {
  std::vector<bool> inliers;
  int count = 0;
  Transform model;
};

namespace detail {

struct Consensus {
  std::vector<bool> flags;
  int count = 0;
  double residual = 0;
};

inline Consensus consensus(const Transform& t, const std::vector<MatchedPair>& pairs, double threshold) {
  Consensus c;
  c.flags.resize(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double r = pair_residual(t, pairs[i]);
    if (r < threshold) {
      c.flags[i] = true;
      ++c.count;
      c.residual += r;
    }
  }
  return c;
}

inline bool better(const Consensus& a, const Consensus& b) {
  return a.count > b.count || (a.count == b.count && a.residual < b.residual);
}

inline Transform fit_uniform(const std::vector<MatchedPair>& pairs, const std::vector<bool>& use) {
  std::vector<Vec3> s, t;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (use[i]) {
      s.push_back(pairs[i].p_s);
      t.push_back(pairs[i].p_t);
    }
  return weighted_alignment(s, t, std::vector<double>(s.size(), 1.0));
}

}  // namespace detail

/// Three-point hypotheses with uniform weights; the best consensus set is then refit on
/// its own inliers until it stops changing.
inline RansacResult ransac(const std::vector<MatchedPair>& pairs, int iterations, double inlier_sq, std::uint64_t seed,
                           int min_inliers = 3) {
  const std::size_t n = pairs.size();
  if (n < 3) throw Error(Errc::NoConsensus, "fewer than 3 pairs");
  if (iterations < 1 || !(inlier_sq > 0)) throw Error(Errc::InvalidConfig, "bad ransac parameters");
  auto rng = make_rng(seed, {0x52414e53u});
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  detail::Consensus best;
  Transform best_model;
  for (int it = 0; it < iterations; ++it) {
    std::size_t a = pick(rng), b = pick(rng), c = pick(rng);
    while (b == a) b = pick(rng);
    while (c == a || c == b) c = pick(rng);
    Transform t;
    try {
      t = weighted_alignment({pairs[a].p_s, pairs[b].p_s, pairs[c].p_s}, {pairs[a].p_t, pairs[b].p_t, pairs[c].p_t},
                             {1.0, 1.0, 1.0});
    } catch (const Error&) {
      continue;
    }
    auto cons = detail::consensus(t, pairs, inlier_sq);
    if (detail::better(cons, best)) {
      best = std::move(cons);
      best_model = t;
    }
  }
  if (best.count < std::max(3, min_inliers)) throw Error(Errc::NoConsensus, "best consensus set has " + std::to_string(best.count) + " pairs");

  for (int round = 0; round < 20; ++round) {
    Transform t;
    try {
      t = detail::fit_uniform(pairs, best.flags);
    } catch (const Error&) {
      break;
    }
    auto cons = detail::consensus(t, pairs, inlier_sq);
    if (cons.count < 3) break;
    const bool same = cons.flags == best.flags;
    if (!same && cons.count < best.count) break;
    best = std::move(cons);
    best_model = t;
    if (same) break;
  }
  return {best.flags, best.count, best_model};
}

/// Full E-step pose pipeline from two feature maps and their disparity channels.
inline PoseEstimate estimate_pose(const FeatureMap& src, const DisparityMap& src_disp, const FeatureMap& tgt,
                                  const DisparityMap& tgt_disp, const StereoCamera& cam, const PoseParams& params) {
  params.validate();
  const auto detected = detect_keypoints(src, params.cell);
  // Keypoints without source depth can never form a pair, so they are not matched.
  std::vector<std::size_t> keep;
  std::vector<double> src_depth;
  for (std::size_t i = 0; i < detected.size(); ++i) {
    const double ds = sample_disparity(src_disp, detected[i].q).value;
    if (ds > params.d_min) {
      keep.push_back(i);
      src_depth.push_back(ds);
    }
  }
  RowMatrixXd descriptors(static_cast<Eigen::Index>(keep.size()), src.dim());
  for (std::size_t i = 0; i < keep.size(); ++i)
    descriptors.row(static_cast<Eigen::Index>(i)) = detected[keep[i]].descriptor.transpose();
  const auto matched = keep.empty() ? std::vector<Vec2>{} : soft_match_all(descriptors, MatchTarget(tgt, params.stride), params.tau);

  PoseEstimate est;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const auto& kp = detected[keep[i]];
    const double ds = src_depth[i];
    const double dt = sample_disparity(tgt_disp, matched[i]).value;
    if (!(dt > params.d_min)) continue;
    auto t = bilinear_sample(tgt, matched[i]);
    MatchedPair p;
    p.p_s = backproject(cam, {kp.q.x(), kp.q.y(), ds});
    p.p_t = backproject(cam, {matched[i].x(), matched[i].y(), dt});
    p.d_s = kp.descriptor;
    p.d_t = std::move(t.descriptor);
    p.s_s = kp.score;
    p.s_t = t.score;
    p.w = match_weight(p.d_s, p.d_t, p.s_s, p.s_t);
    p.keypoint = static_cast<int>(keep[i]);
    p.q_s = kp.q;
    p.q_t = matched[i];
    est.pairs.push_back(std::move(p));
  }
  if (est.pairs.size() < 3) throw Error(Errc::TooFewValidDepths, std::to_string(est.pairs.size()) + " pairs with valid depth");

  const auto rs = ransac(est.pairs, params.ransac_iters, params.inlier_sq, params.seed, params.min_inliers);
  std::vector<MatchedPair> inliers;
  for (std::size_t i = 0; i < est.pairs.size(); ++i) {
    est.pairs[i].inlier = rs.inliers[i];
    if (rs.inliers[i]) inliers.push_back(est.pairs[i]);
  }
  est.t_ts = weighted_alignment(inliers);
  est.inlier_count = rs.count;
  est.loss = keypoint_loss(est.t_ts, est.pairs);
  for (const auto& p : est.pairs) est.residuals.push_back(pair_residual(est.t_ts, p));
  return est;
}

}  // namespace seqloc
