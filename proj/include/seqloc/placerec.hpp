#pragma once

// Sequence-based place recognition over patch-normalized thumbnails.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "seqloc/error.hpp"
#include "seqloc/image.hpp"
#include "seqloc/parallel.hpp"
#include "seqloc/simworld.hpp"

namespace seqloc {

struct SeqSlamParams {
  int down_w = 32;
  int down_h = 24;
  int patch_size = 8;
  int seq_len = 11;
  double v_min = 0.8;
  double v_max = 1.25;
  int v_steps = 7;
  int window_r = 5;
  bool contrast_enhance = true;
};

/// |query| x |reference| dissimilarities.
struct DifferenceMatrix {
  int query_id = 0;
  int ref_id = 0;
  Eigen::MatrixXd values;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

struct RawMatch {
  int ref_frame = 0;
  double score = 0;
};

using RawMatchList = std::vector<RawMatch>;

/// Area-averaging resample of an intensity image to out_w x out_h.
inline Eigen::MatrixXd area_downsample(const Eigen::MatrixXd& img, int out_w, int out_h) {
  const double sx = static_cast<double>(img.cols()) / out_w;
  const double sy = static_cast<double>(img.rows()) / out_h;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(out_h, out_w);
  for (int oy = 0; oy < out_h; ++oy) {
    const double y0 = oy * sy, y1 = (oy + 1) * sy;
    for (int ox = 0; ox < out_w; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx;
      double acc = 0;
      for (int y = static_cast<int>(std::floor(y0)); y < std::min<double>(std::ceil(y1), img.rows()); ++y) {
        const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
        if (wy <= 0) continue;
        for (int x = static_cast<int>(std::floor(x0)); x < std::min<double>(std::ceil(x1), img.cols()); ++x) {
          const double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
          if (wx > 0) acc += wx * wy * img(y, x);
        }
      }
      out(oy, ox) = acc / (sx * sy);
    }
  }
  return out;
}

/// Downsample then normalize every patch to zero mean, unit variance (variance floor 1e-6).
inline Eigen::MatrixXd preprocess(const Eigen::MatrixXd& image, int down_w, int down_h, int patch_size) {
  if (patch_size <= 0 || down_w <= 0 || down_h <= 0 || down_w % patch_size != 0 || down_h % patch_size != 0)
    throw Error(Errc::BadGeometry, "patch size must divide the downsampled dimensions");
  Eigen::MatrixXd small = area_downsample(image, down_w, down_h);
  constexpr double kVarianceFloor = 1e-6;
  for (int py = 0; py < down_h; py += patch_size) {
    for (int px = 0; px < down_w; px += patch_size) {
      auto block = small.block(py, px, patch_size, patch_size);
      const double mean = block.mean();
      const double var = (block.array() - mean).square().mean();
      block = (block.array() - mean) / std::sqrt(std::max(var, kVarianceFloor));
    }
  }
  return small;
}

inline Eigen::MatrixXd preprocess(const GrayImage& image, const SeqSlamParams& p) {
  return preprocess(image.to_unit(), p.down_w, p.down_h, p.patch_size);
}

/// Entry (i, j) is the mean absolute difference of preprocessed left images i and j.
inline DifferenceMatrix difference_matrix(const Experience& query, const Experience& ref, const SeqSlamParams& p) {
  if (query.frames.empty() || ref.frames.empty()) throw Error(Errc::InvalidConfig, "experiences must be non-empty");
  auto thumbs = [&](const Experience& e) {
    std::vector<Eigen::MatrixXd> out(e.frames.size());
    parallel_for(out.size(), [&](std::size_t i) { out[i] = preprocess(e.frames[i].left, p); });
    return out;
  };
  const auto q = thumbs(query);
  const auto r = thumbs(ref);
  DifferenceMatrix d;
  d.query_id = query.id;
  d.ref_id = ref.id;
  d.values.resize(static_cast<Eigen::Index>(q.size()), static_cast<Eigen::Index>(r.size()));
  parallel_for(q.size(), [&](std::size_t i) {
    for (std::size_t j = 0; j < r.size(); ++j)
      d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (q[i] - r[j]).cwiseAbs().mean();
  });
  return d;
}

/// Local contrast enhancement along each column (query axis): (x - mean) / std over
/// rows i-r..i+r, std floor 1e-6, then shifted so the minimum is 0. Matching is
/// invariant to that shift.
inline DifferenceMatrix contrast_enhance(const DifferenceMatrix& d, int window_r) {
  if (window_r < 1) throw Error(Errc::InvalidConfig, "window_r must be >= 1");
  DifferenceMatrix out = d;
  const Eigen::Index rows = d.rows();
  for (Eigen::Index j = 0; j < d.cols(); ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      const Eigen::Index a = std::max<Eigen::Index>(0, i - window_r);
      const Eigen::Index b = std::min<Eigen::Index>(rows - 1, i + window_r);
      const auto seg = d.values.col(j).segment(a, b - a + 1);
      const double mean = seg.mean();
      const double sd = std::sqrt((seg.array() - mean).square().mean());
      out.values(i, j) = (d.values(i, j) - mean) / std::max(sd, 1e-6);
    }
  }
  if (out.values.size() > 0) out.values.array() -= out.values.minCoeff();
  return out;
}

/// For each query frame, the reference index whose straight line through the matrix
/// (slope v in [v_min, v_max], seq_len query frames centred on the query frame)
/// has the smallest summed dissimilarity. Cells outside the matrix add the matrix mean.
inline RawMatchList match_sequences(const DifferenceMatrix& d, double v_min, double v_max, int v_steps, int seq_len) {
  if (seq_len < 3 || seq_len % 2 == 0) throw Error(Errc::InvalidConfig, "seq_len must be odd and >= 3");
  if (!(v_min > 0) || v_max < v_min || v_steps < 1) throw Error(Errc::InvalidConfig, "bad velocity range");
  const Eigen::Index rows = d.rows(), cols = d.cols();
  if (rows < seq_len) throw Error(Errc::SequenceTooShort, "query has fewer frames than seq_len");
  const double penalty = d.values.mean();
  const int half = seq_len / 2;
  std::vector<double> velocities;
  for (int k = 0; k < v_steps; ++k)
    velocities.push_back(v_steps == 1 ? v_min : v_min + (v_max - v_min) * k / (v_steps - 1));

  RawMatchList out(static_cast<std::size_t>(rows));
  parallel_for(out.size(), [&](std::size_t qi) {
    const auto i = static_cast<Eigen::Index>(qi);
    RawMatch best{0, std::numeric_limits<double>::infinity()};
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (double v : velocities) {
        double score = 0;
        for (int t = -half; t <= half; ++t) {
          const Eigen::Index row = i + t;
          const auto col = static_cast<Eigen::Index>(std::lround(static_cast<double>(j) + v * t));
          score += (row < 0 || row >= rows || col < 0 || col >= cols) ? penalty : d.values(row, col);
        }
        if (score < best.score) best = {static_cast<int>(j), score};
      }
    }
    out[qi] = best;
  });
  return out;
}

/// Difference matrix, optional contrast enhancement and sequence search in one call.
inline RawMatchList seqslam(const Experience& query, const Experience& ref, const SeqSlamParams& p,
                            DifferenceMatrix* raw_out = nullptr) {
  auto d = difference_matrix(query, ref, p);
  if (raw_out) *raw_out = d;
  if (p.contrast_enhance) d = contrast_enhance(d, p.window_r);
  return match_sequences(d, p.v_min, p.v_max, p.v_steps, p.seq_len);
}

}  // namespace seqloc
