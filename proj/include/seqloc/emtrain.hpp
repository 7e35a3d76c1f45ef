#pragma once

// EM refinement of a prototype-bank descriptor model. The E-step estimates relative pose
// with the current descriptors; the M-step descends the keypoint loss with that pose and
// its inlier set held fixed.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "seqloc/assoc.hpp"
#include "seqloc/csv.hpp"
#include "seqloc/error.hpp"
#include "seqloc/feature_map.hpp"
#include "seqloc/features.hpp"
#include "seqloc/geometry.hpp"
#include "seqloc/image.hpp"
#include "seqloc/parallel.hpp"
#include "seqloc/pose.hpp"
#include "seqloc/random.hpp"
#include "seqloc/simworld.hpp"

namespace seqloc {

// ---------------------------------------------------------------------------
// Patch assignment (fixed, independent of the learned parameters)

struct AssignmentParams {
  int patch_radius = 3;
  int dilation = 2;            // pixel spacing between patch samples
  int top_m = 32;
  double sharpness = 5.0;      // softmax gain on patch/code cosine
  double detect_gain = 40.0;   // detection logit per unit of local intensity std
  std::uint64_t codebook_seed = 0x636f6465ull;
};

/// Sparse soft assignment of every pixel to top_m codes, plus detection logits.
struct FrameAssignment {
  int width = 0, height = 0, top_m = 0, k = 0;
  std::vector<std::uint16_t> index;  // pixel-major, top_m per pixel
  std::vector<float> weight;
  Eigen::VectorXd logits;

  Eigen::Index pixel_count() const { return static_cast<Eigen::Index>(width) * height; }
};

/// K unit-norm random codes over normalized (2r+1)^2 patches.
inline Eigen::MatrixXd make_codebook(int k, int patch_dim, std::uint64_t seed) {
  auto rng = make_rng(seed, {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(patch_dim)});
  Eigen::MatrixXd c(k, patch_dim);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < patch_dim; ++j) c(i, j) = gaussian(rng);
    c.row(i).array() -= c.row(i).mean();
    c.row(i).normalize();
  }
  return c;
}

inline FrameAssignment compute_assignment(const GrayImage& image, int k, const AssignmentParams& p = {}) {
  if (k < 1 || k > 65536 || p.top_m < 1 || p.top_m > k || p.patch_radius < 1 || p.dilation < 1)
    throw Error(Errc::InvalidConfig, "bad assignment parameters");
  const Eigen::MatrixXd img = image.to_unit();
  const int w = image.width, h = image.height, r = p.patch_radius, side = 2 * r + 1, f = side * side;
  const Eigen::MatrixXd codes = make_codebook(k, f, p.codebook_seed);

  FrameAssignment a;
  a.width = w;
  a.height = h;
  a.top_m = p.top_m;
  a.k = k;
  const Eigen::Index m = a.pixel_count();
  a.logits.resize(m);
  Eigen::MatrixXd patches(m, f);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const Eigen::Index j = static_cast<Eigen::Index>(v) * w + u;
      int c = 0;
      for (int dv = -r; dv <= r; ++dv)
        for (int du = -r; du <= r; ++du)
          patches(j, c++) = img(std::clamp(v + dv * p.dilation, 0, h - 1), std::clamp(u + du * p.dilation, 0, w - 1));
      auto row = patches.row(j);
      row.array() -= row.mean();
      const double norm = row.norm();
      a.logits(j) = p.detect_gain * norm / std::sqrt(static_cast<double>(f));
      if (norm > 1e-12) row /= norm;
    }
  }
  const Eigen::MatrixXd sim = patches * codes.transpose();
  a.index.resize(static_cast<std::size_t>(m * p.top_m));
  a.weight.resize(a.index.size());
  std::vector<int> order(static_cast<std::size_t>(k));
  for (Eigen::Index j = 0; j < m; ++j) {
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + p.top_m, order.end(), [&](int x, int y) {
      return sim(j, x) > sim(j, y) || (sim(j, x) == sim(j, y) && x < y);
    });
    const double peak = sim(j, order[0]);
    double total = 0;
    for (int t = 0; t < p.top_m; ++t) total += std::exp(p.sharpness * (sim(j, order[t]) - peak));
    for (int t = 0; t < p.top_m; ++t) {
      const auto slot = static_cast<std::size_t>(j * p.top_m + t);
      a.index[slot] = static_cast<std::uint16_t>(order[t]);
      a.weight[slot] = static_cast<float>(std::exp(p.sharpness * (sim(j, order[t]) - peak)) / total);
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Model

struct DescriptorModel {
  RowMatrixXd prototypes;      // K x D
  Eigen::VectorXd score_logits;  // K

  int k() const { return static_cast<int>(prototypes.rows()); }
  int dim() const { return static_cast<int>(prototypes.cols()); }
  bool operator==(const DescriptorModel&) const = default;
};

inline DescriptorModel init_model(int k, int dim, std::uint64_t seed) {
  if (k < 1 || dim < 2) throw Error(Errc::InvalidConfig, "model needs K >= 1 and D >= 2");
  auto rng = make_rng(seed, {0x6d6f64656cull});
  DescriptorModel m;
  m.prototypes.resize(k, dim);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < dim; ++j) m.prototypes(i, j) = gaussian(rng);
  m.score_logits = Eigen::VectorXd::Zero(k);
  return m;
}

/// Rows of A * P for a sparse assignment A.
inline RowMatrixXd assigned_descriptors(const FrameAssignment& a, const RowMatrixXd& prototypes) {
  RowMatrixXd out = RowMatrixXd::Zero(a.pixel_count(), prototypes.cols());
  for (Eigen::Index j = 0; j < a.pixel_count(); ++j)
    for (int t = 0; t < a.top_m; ++t) {
      const auto slot = static_cast<std::size_t>(j * a.top_m + t);
      out.row(j) += static_cast<double>(a.weight[slot]) * prototypes.row(a.index[slot]);
    }
  return out;
}

inline FeatureMap forward(const DescriptorModel& model, const FrameAssignment& a) {
  if (a.k != model.k()) throw Error(Errc::InvalidConfig, "assignment and model disagree on K");
  FeatureMap map(a.height, a.width, model.dim());
  map.descriptors = assigned_descriptors(a, model.prototypes);
  for (Eigen::Index j = 0; j < a.pixel_count(); ++j) {
    double z = 0;
    for (int t = 0; t < a.top_m; ++t) {
      const auto slot = static_cast<std::size_t>(j * a.top_m + t);
      z += a.weight[slot] * model.score_logits(a.index[slot]);
    }
    map.scores(j) = 1.0 / (1.0 + std::exp(-z));
  }
  map.logits = a.logits;
  return map;
}

inline FeatureMap forward(const DescriptorModel& model, const GrayImage& image, const AssignmentParams& p = {}) {
  return forward(model, compute_assignment(image, model.k(), p));
}

// model.bin: "SLDM", u16 version, u32 K, u32 D, f32 prototypes row-major, f32 score logits.
inline void write_model(const DescriptorModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot open " + path.string() + " for writing");
  auto put = [&](auto v) {
    char b[sizeof(v)];
    std::memcpy(b, &v, sizeof(v));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(v));
    out.write(b, sizeof(v));
  };
  out.write("SLDM", 4);
  put(std::uint16_t{1});
  put(static_cast<std::uint32_t>(m.k()));
  put(static_cast<std::uint32_t>(m.dim()));
  for (int i = 0; i < m.k(); ++i)
    for (int j = 0; j < m.dim(); ++j) put(static_cast<float>(m.prototypes(i, j)));
  for (int i = 0; i < m.k(); ++i) put(static_cast<float>(m.score_logits(i)));
  if (!out) throw Error(Errc::Io, "failed writing " + path.string());
}

inline DescriptorModel read_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  auto get = [&](auto& v) {
    char b[sizeof(v)];
    if (!in.read(b, sizeof(v))) throw Error(Errc::Io, path.string() + ": truncated model file");
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(v));
    std::memcpy(&v, b, sizeof(v));
  };
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "SLDM") throw Error(Errc::Io, path.string() + ": not a model file");
  std::uint16_t version = 0;
  std::uint32_t k = 0, d = 0;
  get(version);
  get(k);
  get(d);
  if (version != 1) throw Error(Errc::Io, path.string() + ": unsupported model version");
  if (k < 1 || d < 2 || k > (1u << 16) || d > (1u << 16)) throw Error(Errc::Io, path.string() + ": bad model shape");
  DescriptorModel m;
  m.prototypes.resize(k, d);
  m.score_logits.resize(k);
  float x = 0;
  for (std::uint32_t i = 0; i < k; ++i)
    for (std::uint32_t j = 0; j < d; ++j) {
      get(x);
      m.prototypes(i, j) = x;
    }
  for (std::uint32_t i = 0; i < k; ++i) {
    get(x);
    m.score_logits(i) = x;
  }
  if (!m.prototypes.allFinite() || !m.score_logits.allFinite()) throw Error(Errc::Io, path.string() + ": non-finite parameters");
  return m;
}

// ---------------------------------------------------------------------------
// E-step

/// Everything about one frame that does not depend on the model.
struct FrameInputs {
  FrameAssignment assignment;
  const DisparityMap* disparity = nullptr;
};

inline PoseEstimate e_step(const DescriptorModel& model, const FrameInputs& src, const FrameInputs& tgt,
                           const StereoCamera& cam, const PoseParams& params) {
  const auto src_map = forward(model, src.assignment);
  const auto tgt_map = forward(model, tgt.assignment);
  return estimate_pose(src_map, *src.disparity, tgt_map, *tgt.disparity, cam, params);
}

/// E-step outputs the M-step treats as constants: the pose and the inlier source points.
struct FrozenStep {
  Transform t_ts;
  std::vector<Vec2> q_s;
  std::vector<Vec3> p_s;
};

inline FrozenStep freeze(const PoseEstimate& est) {
  FrozenStep f;
  f.t_ts = est.t_ts;
  for (const auto& p : est.pairs)
    if (p.inlier) {
      f.q_s.push_back(p.q_s);
      f.p_s.push_back(p.p_s);
    }
  return f;
}

// ---------------------------------------------------------------------------
// M-step

struct MStepProblem {
  const FrameInputs* src = nullptr;
  const FrameInputs* tgt = nullptr;
  StereoCamera camera;
  double tau = 100.0;
  FrozenStep frozen;
};

namespace detail {

/// Bilinear blend of the source assignment at q, as a dense K-vector.
inline Eigen::RowVectorXd blended_assignment(const FrameAssignment& a, const Vec2& q) {
  const auto s = bilinear_stencil(a.width, a.height, q);
  Eigen::RowVectorXd alpha = Eigen::RowVectorXd::Zero(a.k);
  for (int n = 0; n < 4; ++n)
    for (int t = 0; t < a.top_m; ++t) {
      const auto slot = static_cast<std::size_t>(s.index[n] * a.top_m + t);
      alpha(a.index[slot]) += s.weight[n] * a.weight[slot];
    }
  return alpha;
}

inline RowMatrixXd normalize_rows(const RowMatrixXd& x, Eigen::VectorXd& norms) { return zncc_normalize_rows(x, &norms); }

}  // namespace detail

/// Keypoint loss of one frozen pair as a function of the prototypes; fills dL/dP when grad is set.
/// Returns +inf when a soft match leaves the region with depth.
inline double keypoint_loss_and_grad(const RowMatrixXd& prototypes, const MStepProblem& prob, RowMatrixXd* grad) {
  const auto& fr = prob.frozen;
  const auto& ta = prob.tgt->assignment;
  const auto n = static_cast<Eigen::Index>(fr.q_s.size());
  if (grad) *grad = RowMatrixXd::Zero(prototypes.rows(), prototypes.cols());
  if (n == 0) return 0.0;

  RowMatrixXd alpha(n, prototypes.rows());
  for (Eigen::Index i = 0; i < n; ++i)
    alpha.row(i) = detail::blended_assignment(prob.src->assignment, fr.q_s[static_cast<std::size_t>(i)]);
  Eigen::VectorXd nu, nv;
  const RowMatrixXd uhat = detail::normalize_rows(alpha * prototypes, nu);
  const RowMatrixXd vhat = detail::normalize_rows(assigned_descriptors(ta, prototypes), nv);
  const RowMatrixXd z = uhat * vhat.transpose();
  RowMatrixXd w = z;
  softmax_rows(w, prob.tau);
  const auto coords = pixel_grid(ta.width, ta.height);
  const Eigen::Matrix<double, Eigen::Dynamic, 2> qhat = w * coords;

  double loss = 0;
  Eigen::Matrix<double, Eigen::Dynamic, 2> g(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec2 q = qhat.row(i).transpose();
    const auto ds = sample_disparity(*prob.tgt->disparity, q);
    if (!(ds.value > 0)) return std::numeric_limits<double>::infinity();
    const Vec3 y(q.x(), q.y(), ds.value);
    const Vec3 e = apply(fr.t_ts, fr.p_s[static_cast<std::size_t>(i)]) - backproject(prob.camera, y);
    loss += e.squaredNorm();
    if (grad) {
      const Mat3 j = backproject_jacobian(prob.camera, y);
      Eigen::Matrix<double, 3, 2> dp_dq = j.leftCols<2>() + j.col(2) * ds.gradient.transpose();
      g.row(i) = (-2.0 * dp_dq.transpose() * e).transpose();
    }
  }
  if (!grad) return loss;

  // dL/dz_ij = tau * w_ij * <g_i, q_j - qhat_i>
  RowMatrixXd gamma = g * coords.transpose();
  for (Eigen::Index i = 0; i < n; ++i) gamma.row(i).array() -= g.row(i).dot(qhat.row(i));
  gamma = prob.tau * gamma.cwiseProduct(w);
  const RowMatrixXd gz = gamma.cwiseProduct(z);
  const Eigen::VectorXd row_gz = gz.rowwise().sum();
  const Eigen::RowVectorXd col_gz = gz.colwise().sum();

  RowMatrixXd gu = gamma * vhat;
  for (Eigen::Index i = 0; i < n; ++i)
    gu.row(i) = nu(i) > 0 ? ((gu.row(i) - row_gz(i) * uhat.row(i)) / nu(i)).eval() : Eigen::RowVectorXd::Zero(gu.cols());
  RowMatrixXd gv = gamma.transpose() * uhat;
  for (Eigen::Index j = 0; j < gv.rows(); ++j)
    gv.row(j) = nv(j) > 0 ? ((gv.row(j) - col_gz(j) * vhat.row(j)) / nv(j)).eval() : Eigen::RowVectorXd::Zero(gv.cols());

  *grad = alpha.transpose() * gu;
  for (Eigen::Index j = 0; j < ta.pixel_count(); ++j)
    for (int t = 0; t < ta.top_m; ++t) {
      const auto slot = static_cast<std::size_t>(j * ta.top_m + t);
      grad->row(ta.index[slot]) += static_cast<double>(ta.weight[slot]) * gv.row(j);
    }
  return loss;
}

inline double batch_loss_and_grad(const RowMatrixXd& prototypes, std::span<const MStepProblem> probs, RowMatrixXd* grad) {
  std::vector<double> losses(probs.size());
  std::vector<RowMatrixXd> grads(grad ? probs.size() : 0);
  parallel_for(probs.size(), [&](std::size_t i) {
    losses[i] = keypoint_loss_and_grad(prototypes, probs[i], grad ? &grads[i] : nullptr);
  });
  double total = 0;
  for (double l : losses) total += l;
  if (grad) {
    *grad = RowMatrixXd::Zero(prototypes.rows(), prototypes.cols());
    for (const auto& g : grads) *grad += g;
  }
  return total;
}

/// Central differences, one coordinate at a time.
inline Eigen::VectorXd finite_diff_grad(const std::function<double(const Eigen::VectorXd&)>& loss,
                                        const Eigen::VectorXd& theta, double h) {
  if (!(h > 0)) throw Error(Errc::InvalidConfig, "h must be positive");
  Eigen::VectorXd g(theta.size());
  Eigen::VectorXd x = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    x(i) = theta(i) + h;
    const double up = loss(x);
    x(i) = theta(i) - h;
    const double down = loss(x);
    x(i) = theta(i);
    g(i) = (up - down) / (2 * h);
  }
  return g;
}

struct MStepStats {
  double loss_before = 0;
  double loss_after = 0;
  int accepted = 0;
  int rejected = 0;
};

/// Gradient descent on the summed keypoint loss. A step is kept only if it lowers the loss;
/// otherwise the learning rate is halved and the step retried, at most five times.
inline DescriptorModel m_step(const DescriptorModel& model, std::span<const MStepProblem> probs, double lr, int steps,
                              MStepStats* stats = nullptr) {
  if (steps < 0 || !(lr > 0)) throw Error(Errc::InvalidConfig, "m_step needs lr > 0 and steps >= 0");
  DescriptorModel out = model;
  RowMatrixXd grad;
  double current = batch_loss_and_grad(out.prototypes, probs, nullptr);
  MStepStats st;
  st.loss_before = current;
  for (int s = 0; s < steps && std::isfinite(current); ++s) {
    current = batch_loss_and_grad(out.prototypes, probs, &grad);
    if (!grad.allFinite()) throw Error(Errc::NonFiniteGradient, "non-finite M-step gradient");
    double eta = lr;
    bool accepted = false;
    for (int halving = 0; halving <= 5; ++halving, eta *= 0.5) {
      const RowMatrixXd trial = out.prototypes - eta * grad;
      const double l = batch_loss_and_grad(trial, probs, nullptr);
      if (l < current) {
        out.prototypes = trial;
        current = l;
        accepted = true;
        break;
      }
      ++st.rejected;
    }
    if (!accepted) break;
    ++st.accepted;
  }
  st.loss_after = current;
  if (stats) *stats = st;
  return out;
}

inline DescriptorModel m_step(const DescriptorModel& model, const MStepProblem& prob, double lr, int steps,
                              MStepStats* stats = nullptr) {
  return m_step(model, std::span<const MStepProblem>(&prob, 1), lr, steps, stats);
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  int k = 64;
  int dim = 32;         // descriptor length of the model
  int epochs = 20;
  double lr = 20.0;
  int steps = 1;        // M-step gradient steps per batch
  int batch_size = 8;
  std::uint64_t seed = 42;
  PoseParams pose = training_pose_params();
  AssignmentParams assignment{};

  static PoseParams training_pose_params() {
    PoseParams p;
    p.cell = 8;
    p.min_inliers = 6;
    return p;
  }

  void validate() const {
    if (k < 1 || dim < 2 || epochs < 0 || !(lr > 0) || steps < 0 || batch_size < 1)
      throw Error(Errc::InvalidConfig, "training parameters out of range");
    pose.validate();
  }
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0;
  double mean_inliers = 0;
  double mean_rot_err_deg = std::numeric_limits<double>::quiet_NaN();
  double mean_trans_err_m = std::numeric_limits<double>::quiet_NaN();
  int skipped = 0;
  bool operator==(const EpochStats&) const = default;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
};

inline constexpr const char* kReportHeader = "epoch,mean_loss,mean_inliers,mean_rot_err_deg,mean_trans_err_m,skipped";

inline void write_report(const TrainReport& r, const std::filesystem::path& path) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& e : r.epochs)
    rows.push_back({std::to_string(e.epoch), csv::format(e.mean_loss), csv::format(e.mean_inliers),
                    csv::format(e.mean_rot_err_deg), csv::format(e.mean_trans_err_m), std::to_string(e.skipped)});
  csv::write(path, kReportHeader, rows);
}

inline TrainReport read_report(const std::filesystem::path& path) {
  const auto t = csv::read(path, kReportHeader);
  TrainReport r;
  for (const auto& row : t.rows)
    r.epochs.push_back({csv::to_int(row[0]), csv::to_double(row[1]), csv::to_double(row[2]), csv::to_double(row[3]),
                        csv::to_double(row[4]), csv::to_int(row[5])});
  return r;
}

/// Ground-truth T_ts for a pair, supplied by evaluation code only.
using PairTruth = std::function<Transform(const ImagePair&)>;

/// Model-independent inputs for every frame referenced by a pair list.
class FrameCache {
 public:
  FrameCache(const Dataset& ds, std::span<const ImagePair> pairs, int k, const AssignmentParams& p) {
    std::vector<std::pair<int, int>> keys;
    for (const auto& pr : pairs) {
      keys.emplace_back(pr.exp_a, pr.frame_a);
      keys.emplace_back(pr.exp_b, pr.frame_b);
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    std::vector<FrameInputs> inputs(keys.size());
    parallel_for(keys.size(), [&](std::size_t i) {
      const auto& frame = ds.experience(keys[i].first).frames.at(static_cast<std::size_t>(keys[i].second));
      if (frame.disparity.values.empty())
        throw Error(Errc::CorruptDataset, "frame " + std::to_string(keys[i].second) + " has no disparity channel");
      inputs[i].assignment = compute_assignment(frame.left, k, p);
      inputs[i].disparity = &frame.disparity;
    });
    for (std::size_t i = 0; i < keys.size(); ++i) frames_.emplace(keys[i], std::move(inputs[i]));
  }

  const FrameInputs& at(int exp, int frame) const { return frames_.at({exp, frame}); }

 private:
  std::map<std::pair<int, int>, FrameInputs> frames_;
};

struct PairOutcome {
  std::optional<PoseEstimate> estimate;
  Transform t_ts;  // identity when the E-step failed
};

namespace detail {

inline std::vector<PairOutcome> run_e_steps(const DescriptorModel& model, const FrameCache& cache,
                                            std::span<const ImagePair> pairs, std::span<const std::size_t> order,
                                            const StereoCamera& cam, const PoseParams& base, std::uint64_t seed,
                                            std::uint64_t epoch) {
  std::vector<PairOutcome> out(order.size());
  parallel_for(order.size(), [&](std::size_t i) {
    const auto& pr = pairs[order[i]];
    PoseParams pp = base;
    pp.seed = derive_seed(seed, {epoch, static_cast<std::uint64_t>(order[i])});
    try {
      auto est = e_step(model, cache.at(pr.exp_a, pr.frame_a), cache.at(pr.exp_b, pr.frame_b), cam, pp);
      out[i].t_ts = est.t_ts;
      out[i].estimate = std::move(est);
    } catch (const Error& e) {
      if (e.code() != Errc::NoConsensus && e.code() != Errc::TooFewValidDepths && e.code() != Errc::DegenerateGeometry)
        throw;
    }
  });
  return out;
}

}  // namespace detail

/// Rotation (degrees) and translation (metres) error of an estimate against the truth.
inline std::pair<double, double> pose_error(const Transform& estimate, const Transform& truth) {
  const Transform err = compose(inverse(truth), estimate);
  return {rotation_angle(err.rotation) * 180.0 / std::numbers::pi, err.translation.norm()};
}

/// Summary of E-step outcomes. Failed pairs count as zero inliers and, for pose error,
/// as an identity estimate.
inline EpochStats summarize(int epoch, std::span<const PairOutcome> outcomes, std::span<const ImagePair> pairs,
                            std::span<const std::size_t> order, const PairTruth& truth) {
  EpochStats s;
  s.epoch = epoch;
  double loss = 0, inliers = 0, rot = 0, trans = 0;
  int ok = 0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    if (o.estimate) {
      loss += o.estimate->loss;
      inliers += o.estimate->inlier_count;
      ++ok;
    } else {
      ++s.skipped;
    }
    if (truth) {
      const auto [r, t] = pose_error(o.t_ts, truth(pairs[order[i]]));
      rot += r;
      trans += t;
    }
  }
  const double n = std::max<double>(1.0, static_cast<double>(outcomes.size()));
  s.mean_loss = ok ? loss / ok : 0.0;
  s.mean_inliers = inliers / n;
  if (truth) {
    s.mean_rot_err_deg = rot / n;
    s.mean_trans_err_m = trans / n;
  }
  return s;
}

/// E-step on every pair with a fixed model; used for the initial report row and for evaluation.
inline EpochStats evaluate(const DescriptorModel& model, const FrameCache& cache, std::span<const ImagePair> pairs,
                           const StereoCamera& cam, const PoseParams& pose, std::uint64_t seed,
                           const PairTruth& truth = {}, std::vector<PairOutcome>* outcomes = nullptr) {
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  auto res = detail::run_e_steps(model, cache, pairs, order, cam, pose, seed, 0);
  auto s = summarize(0, res, pairs, order, truth);
  if (outcomes) *outcomes = std::move(res);
  return s;
}

/// The untrained model train() starts from.
inline DescriptorModel initial_model(const TrainConfig& cfg) {
  return init_model(cfg.k, cfg.dim, derive_seed(cfg.seed, {0x696e6974ull}));
}

struct TrainResult {
  DescriptorModel model;
  TrainReport report;
};

/// Row 0 evaluates the initial model; row e summarizes the E-steps run during epoch e.
inline TrainResult train(const Dataset& ds, std::span<const ImagePair> pairs, const TrainConfig& cfg,
                         const PairTruth& truth = {}, const std::function<void(const EpochStats&)>& on_epoch = {}) {
  cfg.validate();
  if (pairs.empty()) throw Error(Errc::EmptyCorrespondences, "no training pairs");
  TrainResult result;
  result.model = initial_model(cfg);
  const FrameCache cache(ds, pairs, cfg.k, cfg.assignment);

  auto first = evaluate(result.model, cache, pairs, ds.camera, cfg.pose, cfg.seed, truth);
  result.report.epochs.push_back(first);
  if (on_epoch) on_epoch(first);

  std::vector<std::size_t> order(pairs.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_rng(cfg.seed, {0x65706f6368ull, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<PairOutcome> outcomes;
    outcomes.reserve(order.size());
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      auto res = detail::run_e_steps(result.model, cache, pairs, batch, ds.camera, cfg.pose, cfg.seed,
                                     static_cast<std::uint64_t>(epoch));
      std::vector<MStepProblem> probs;
      for (std::size_t i = 0; i < res.size(); ++i) {
        if (!res[i].estimate) continue;
        const auto& pr = pairs[batch[i]];
        probs.push_back({&cache.at(pr.exp_a, pr.frame_a), &cache.at(pr.exp_b, pr.frame_b), ds.camera, cfg.pose.tau,
                         freeze(*res[i].estimate)});
      }
      if (!probs.empty()) result.model = m_step(result.model, probs, cfg.lr, cfg.steps);
      for (auto& r : res) outcomes.push_back(std::move(r));
    }
    auto stats = summarize(epoch, outcomes, pairs, order, truth);
    result.report.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

}  // namespace seqloc
