#pragma once

// Keypoint detection, descriptor similarity and differentiable soft matching.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "seqloc/error.hpp"
#include "seqloc/feature_map.hpp"
#include "seqloc/geometry.hpp"

namespace seqloc {

struct Keypoint {
  Vec2 q = Vec2::Zero();  // [u_l, v_l], sub-pixel
  Eigen::VectorXd descriptor;
  double score = 0;
};

/// The four grid neighbours of a sub-pixel location and their bilinear weights,
/// plus the weights' derivatives with respect to u and v.
struct BilinearStencil {
  std::array<Eigen::Index, 4> index{};
  std::array<double, 4> weight{};
  std::array<double, 4> d_du{};
  std::array<double, 4> d_dv{};
};

inline bool in_bounds(int width, int height, const Vec2& q) {
  return q.x() >= 0.0 && q.y() >= 0.0 && q.x() <= width - 1 && q.y() <= height - 1;
}

inline BilinearStencil bilinear_stencil(int width, int height, const Vec2& q) {
  if (!in_bounds(width, height, q) || !q.allFinite())
    throw Error(Errc::OutOfBounds, "sample location outside the image");
  const int u0 = std::min(static_cast<int>(std::floor(q.x())), std::max(width - 2, 0));
  const int v0 = std::min(static_cast<int>(std::floor(q.y())), std::max(height - 2, 0));
  const int u1 = std::min(u0 + 1, width - 1), v1 = std::min(v0 + 1, height - 1);
  const double a = q.x() - u0, b = q.y() - v0;
  BilinearStencil s;
  auto idx = [&](int u, int v) { return static_cast<Eigen::Index>(v) * width + u; };
  s.index = {idx(u0, v0), idx(u1, v0), idx(u0, v1), idx(u1, v1)};
  s.weight = {(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b};
  s.d_du = {-(1 - b), 1 - b, -b, b};
  s.d_dv = {-(1 - a), -a, 1 - a, a};
  return s;
}

struct MapSample {
  Eigen::VectorXd descriptor;
  double score = 0;
};

/// Bilinear blend of the four neighbours for every channel.
inline MapSample bilinear_sample(const FeatureMap& map, const Vec2& q) {
  const auto s = bilinear_stencil(map.width, map.height, q);
  MapSample out{Eigen::VectorXd::Zero(map.dim()), 0.0};
  for (int n = 0; n < 4; ++n) {
    out.descriptor += s.weight[n] * map.descriptors.row(s.index[n]).transpose();
    out.score += s.weight[n] * map.scores(s.index[n]);
  }
  out.score = std::clamp(out.score, 0.0, 1.0);
  return out;
}

struct DisparitySample {
  double value = 0;          // <= 0 when no neighbour carries depth
  Vec2 gradient = Vec2::Zero();
};

/// Bilinear interpolation over the neighbours that carry depth (> 0), renormalized
/// by their weight, so depth edges do not blend with empty pixels.
inline DisparitySample sample_disparity(const DisparityMap& disp, const Vec2& q) {
  const auto s = bilinear_stencil(disp.width, disp.height, q);
  double num = 0, den = 0;
  Vec2 dnum = Vec2::Zero(), dden = Vec2::Zero();
  for (int n = 0; n < 4; ++n) {
    const double d = disp.values[static_cast<std::size_t>(s.index[n])];
    if (!(d > 0)) continue;
    num += s.weight[n] * d;
    den += s.weight[n];
    dnum += Vec2(s.d_du[n], s.d_dv[n]) * d;
    dden += Vec2(s.d_du[n], s.d_dv[n]);
  }
  if (den <= 1e-12) return {};
  return {num / den, (dnum * den - dden * num) / (den * den)};
}

/// One keypoint per cell x cell block: spatial softmax of the detection logits, keypoint
/// at the softmax-weighted mean pixel coordinate. Partial cells at the border are used as-is.
inline std::vector<Keypoint> detect_keypoints(const FeatureMap& map, int cell) {
  if (cell < 1) throw Error(Errc::InvalidConfig, "cell must be >= 1");
  std::vector<Keypoint> out;
  for (int cy = 0; cy < map.height; cy += cell) {
    for (int cx = 0; cx < map.width; cx += cell) {
      const int ux = std::min(cx + cell, map.width), vy = std::min(cy + cell, map.height);
      double peak = -std::numeric_limits<double>::infinity();
      for (int v = cy; v < vy; ++v)
        for (int u = cx; u < ux; ++u) peak = std::max(peak, map.logits(map.index(u, v)));
      double total = 0;
      Vec2 q = Vec2::Zero();
      for (int v = cy; v < vy; ++v)
        for (int u = cx; u < ux; ++u) {
          const double w = std::exp(map.logits(map.index(u, v)) - peak);
          total += w;
          q += w * Vec2(u, v);
        }
      q /= total;
      q.x() = std::clamp(q.x(), static_cast<double>(cx), static_cast<double>(ux - 1));
      q.y() = std::clamp(q.y(), static_cast<double>(cy), static_cast<double>(vy - 1));
      auto sample = bilinear_sample(map, q);
      out.push_back({q, std::move(sample.descriptor), sample.score});
    }
  }
  return out;
}

/// Zero-mean, unit-norm copy of a descriptor; zero vector when it has no variance.
inline Eigen::VectorXd zncc_normalize(const Eigen::VectorXd& d) {
  Eigen::VectorXd c = d.array() - d.mean();
  const double n = c.norm();
  if (!(n > 1e-12 * std::max(1.0, d.cwiseAbs().maxCoeff()))) return Eigen::VectorXd::Zero(d.size());
  return c / n;
}

/// Zero-normalized cross correlation in [-1, 1]; 0 if either input is constant.
inline double zncc(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2) throw Error(Errc::InvalidConfig, "zncc needs equal-length vectors, D >= 2");
  return std::clamp(zncc_normalize(a).dot(zncc_normalize(b)), -1.0, 1.0);
}

/// Row-wise zncc normalization of a descriptor matrix. Norms of the centred rows are
/// returned through `norms` (0 for constant rows).
inline RowMatrixXd zncc_normalize_rows(const RowMatrixXd& d, Eigen::VectorXd* norms = nullptr) {
  RowMatrixXd out = d.colwise() - d.rowwise().mean();
  if (norms) norms->resize(d.rows());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    const double scale = std::max(1.0, d.row(i).cwiseAbs().maxCoeff());
    if (n > 1e-12 * scale) {
      out.row(i) /= n;
      if (norms) (*norms)(i) = n;
    } else {
      out.row(i).setZero();
      if (norms) (*norms)(i) = 0;
    }
  }
  return out;
}

/// Pixel coordinates (u, v) of every pixel, or every stride-th pixel in both directions.
inline Eigen::Matrix<double, Eigen::Dynamic, 2> pixel_grid(int width, int height, int stride = 1) {
  std::vector<Vec2> pts;
  for (int v = 0; v < height; v += stride)
    for (int u = 0; u < width; u += stride) pts.emplace_back(u, v);
  Eigen::Matrix<double, Eigen::Dynamic, 2> g(static_cast<Eigen::Index>(pts.size()), 2);
  for (std::size_t i = 0; i < pts.size(); ++i) g.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return g;
}

/// Target side of soft matching, prepared once per map.
struct MatchTarget {
  int width = 0, height = 0, stride = 1;
  RowMatrixXd normalized;                         // candidates x D
  Eigen::Matrix<double, Eigen::Dynamic, 2> coords;  // candidates x 2

  MatchTarget() = default;
  explicit MatchTarget(const FeatureMap& map, int stride_ = 1) : width(map.width), height(map.height), stride(stride_) {
    if (stride < 1) throw Error(Errc::InvalidConfig, "stride must be >= 1");
    coords = pixel_grid(width, height, stride);
    if (stride == 1) {
      normalized = zncc_normalize_rows(map.descriptors);
    } else {
      RowMatrixXd sub(coords.rows(), map.dim());
      for (Eigen::Index i = 0; i < coords.rows(); ++i)
        sub.row(i) = map.descriptors.row(map.index(static_cast<int>(coords(i, 0)), static_cast<int>(coords(i, 1))));
      normalized = zncc_normalize_rows(sub);
    }
  }
};

struct SoftMatch {
  Vec2 q = Vec2::Zero();
  Eigen::VectorXd zncc;     // similarity to every candidate pixel
  Eigen::VectorXd weights;  // softmax(tau * zncc), sums to 1
};

/// In-place row softmax of tau * z; returns nothing, rows of `z` become weights.
inline void softmax_rows(Eigen::Ref<RowMatrixXd> z, double tau) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    auto row = z.row(i);
    const double peak = row.maxCoeff();
    row = (tau * (row.array() - peak)).exp();
    row /= row.sum();
  }
}

/// Expected target coordinate under softmax(tau * zncc(d_s, d_t^j)) over all target pixels.
inline SoftMatch soft_match(const Keypoint& kp, const MatchTarget& target, double tau) {
  if (!(tau > 0)) throw Error(Errc::InvalidConfig, "tau must be positive");
  SoftMatch m;
  m.zncc = (target.normalized * zncc_normalize(kp.descriptor)).cwiseMax(-1.0).cwiseMin(1.0);
  RowMatrixXd w = m.zncc.transpose();
  softmax_rows(w, tau);
  m.weights = w.row(0).transpose();
  m.q = (target.coords.transpose() * m.weights);
  return m;
}

inline SoftMatch soft_match(const Keypoint& kp, const FeatureMap& target, double tau, int stride = 1) {
  return soft_match(kp, MatchTarget(target, stride), tau);
}

/// Batched soft matching of many source descriptors; returns one coordinate per row.
inline std::vector<Vec2> soft_match_all(const RowMatrixXd& source_descriptors, const MatchTarget& target, double tau) {
  if (!(tau > 0)) throw Error(Errc::InvalidConfig, "tau must be positive");
  const RowMatrixXd src = zncc_normalize_rows(source_descriptors);
  RowMatrixXd z = (src * target.normalized.transpose()).cwiseMax(-1.0).cwiseMin(1.0);
  softmax_rows(z, tau);
  const Eigen::Matrix<double, Eigen::Dynamic, 2> q = z * target.coords;
  std::vector<Vec2> out(static_cast<std::size_t>(q.rows()));
  for (Eigen::Index i = 0; i < q.rows(); ++i) out[static_cast<std::size_t>(i)] = q.row(i).transpose();
  return out;
}

}  // namespace seqloc
