#pragma once

// Synthetic multi-experience stereo dataset: one route, many traversals under
// slowly drifting appearance, with noisy odometry and evaluation-only poses.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqloc/error.hpp"
#include "seqloc/feature_map.hpp"
#include "seqloc/geometry.hpp"
#include "seqloc/image.hpp"
#include "seqloc/parallel.hpp"
#include "seqloc/random.hpp"

namespace seqloc {

struct SimConfig {
  int experiences = 6;
  int frames = 60;
  int frame_jitter = 3;              // per-experience frame count in frames +/- jitter
  double step_m = 0.5;               // nominal spacing between frames
  double appearance_start = 0.0;
  double appearance_step = 0.1;
  double drift = 0.02;               // VO noise scale
  double lateral_offset_m = 0.3;     // max lateral deviation of a traversal from the route
  double yaw_jitter_deg = 0.5;
  int landmarks = 500;
  int descriptor_dim = 32;
  double landmark_radius_m = 0.12;
  double pixel_noise = 0.01;
  double z_min = 1.0;
  double pair_radius_m = 3.0;        // arc-length radius that counts as "the same place"
  bool write_maps = false;           // emit dense ground-truth SLFM maps per frame
  StereoCamera camera{};

  void validate() const {
    auto fail = [](const std::string& what) { throw Error(Errc::InvalidConfig, what); };
    if (experiences < 2) fail("need at least 2 experiences");
    if (frames < 20) fail("need at least 20 frames per experience");
    if (frame_jitter < 0 || frame_jitter >= frames / 4) fail("frame_jitter out of range");
    if (!(step_m > 0)) fail("step_m must be positive");
    if (appearance_start < 0 || appearance_step < 0 ||
        appearance_start + appearance_step * (experiences - 1) > 1.0 + 1e-12)
      fail("appearance values must stay within [0,1]");
    if (drift < 0) fail("drift must be non-negative");
    if (lateral_offset_m < 0 || yaw_jitter_deg < 0) fail("offsets must be non-negative");
    if (landmarks < 50) fail("need at least 50 landmarks");
    if (descriptor_dim < 2) fail("descriptor_dim must be >= 2");
    if (!(landmark_radius_m > 0) || pixel_noise < 0 || !(z_min > 0) || !(pair_radius_m > 0))
      fail("rendering parameters out of range");
    camera.validate();
  }

  double route_length() const { return (frames - 1) * step_m; }
};

inline nlohmann::json to_json(const SimConfig& c) {
  return {{"experiences", c.experiences},
          {"frames", c.frames},
          {"frame_jitter", c.frame_jitter},
          {"step_m", c.step_m},
          {"appearance_start", c.appearance_start},
          {"appearance_step", c.appearance_step},
          {"drift", c.drift},
          {"lateral_offset_m", c.lateral_offset_m},
          {"yaw_jitter_deg", c.yaw_jitter_deg},
          {"landmarks", c.landmarks},
          {"descriptor_dim", c.descriptor_dim},
          {"landmark_radius_m", c.landmark_radius_m},
          {"pixel_noise", c.pixel_noise},
          {"z_min", c.z_min},
          {"pair_radius_m", c.pair_radius_m},
          {"write_maps", c.write_maps},
          {"camera", to_json(c.camera)}};
}

struct Landmark {
  Vec3 position = Vec3::Zero();
  double base_intensity = 0.5;  // intensity at appearance 0
  double phase = 0.0;           // base_intensity = 0.5 + 0.4 sin(2 pi phase)
  double appearance_rate = 1.0; // cycles of intensity change per unit appearance
  int pattern_freq = 1;
  double pattern_phase = 0.0;
  std::uint64_t descriptor_seed = 0;
};

/// Centreline sample: planar position and heading.
struct RouteSample {
  double s = 0, x = 0, y = 0, heading = 0;
};

struct World {
  std::vector<Landmark> landmarks;
  std::vector<Transform> trajectory;  // camera-to-world poses along the route centreline
  std::vector<RouteSample> route;     // dense centreline samples covering landmark span
  double route_length = 0;
  double route_spacing = 0.05;
  double route_start = 0;

  RouteSample route_at(double s) const {
    const double t = (s - route_start) / route_spacing;
    const auto i = static_cast<std::ptrdiff_t>(std::clamp(std::floor(t), 0.0, static_cast<double>(route.size() - 2)));
    const double a = std::clamp(t - static_cast<double>(i), 0.0, 1.0);
    const auto& p = route[i];
    const auto& q = route[i + 1];
    return {s, p.x + a * (q.x - p.x), p.y + a * (q.y - p.y), p.heading + a * (q.heading - p.heading)};
  }
};

/// Camera-to-world pose for heading psi: camera z forward, x right, y down; world z up.
inline Transform camera_pose(double x, double y, double z, double heading) {
  const double c = std::cos(heading), s = std::sin(heading);
  Mat3 rot;
  rot.col(0) = Vec3(s, -c, 0);
  rot.col(1) = Vec3(0, 0, -1);
  rot.col(2) = Vec3(c, s, 0);
  return {rot, Vec3(x, y, z)};
}

/// Pose of a traversal at arc length s with a lateral offset (metres, +left) and yaw offset (radians).
inline Transform route_pose(const World& world, double s, double lateral, double yaw) {
  const auto r = world.route_at(s);
  const double lx = -std::sin(r.heading), ly = std::cos(r.heading);
  return camera_pose(r.x + lateral * lx, r.y + lateral * ly, 0.0, r.heading + yaw);
}

inline double landmark_intensity(const Landmark& lm, double appearance) {
  return 0.5 + 0.4 * std::sin(2.0 * std::numbers::pi * (lm.phase + lm.appearance_rate * appearance));
}

inline Eigen::VectorXd landmark_descriptor(const Landmark& lm, int dim) {
  Rng rng(lm.descriptor_seed);
  Eigen::VectorXd d(dim);
  for (int i = 0; i < dim; ++i) d(i) = gaussian(rng);
  return d / d.norm();
}

inline int count_visible(const World& world, const Transform& pose_wc, const StereoCamera& cam, double z_min) {
  const Transform t_cw = inverse(pose_wc);
  int count = 0;
  for (const auto& lm : world.landmarks) {
    const Vec3 p = apply(t_cw, lm.position);
    if (p.z() <= z_min) continue;
    const Vec3 y = project(cam, p);
    if (y.x() >= 0 && y.x() <= cam.width - 1 && y.y() >= 0 && y.y() <= cam.height - 1 && y.x() - y.z() >= 0) ++count;
  }
  return count;
}

inline World generate_world(const SimConfig& config, std::uint64_t seed) {
  config.validate();
  World world;
  world.route_length = config.route_length();
  const double length = world.route_length;
  world.route_start = -15.0;
  const double route_end = length + 40.0;

  auto rng = make_rng(seed, {1});
  const double phase_a = uniform(rng, 0, 2 * std::numbers::pi);
  const double phase_b = uniform(rng, 0, 2 * std::numbers::pi);
  auto heading_at = [&](double s) {
    return 0.25 * std::sin(2 * std::numbers::pi * s / 40.0 + phase_a) + 0.12 * std::sin(2 * std::numbers::pi * s / 17.0 + phase_b);
  };
  const auto samples = static_cast<std::size_t>(std::ceil((route_end - world.route_start) / world.route_spacing)) + 1;
  world.route.reserve(samples);
  double x = 0, y = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double s = world.route_start + static_cast<double>(i) * world.route_spacing;
    const double h = heading_at(s);
    world.route.push_back({s, x, y, h});
    const double hm = heading_at(s + 0.5 * world.route_spacing);
    x += world.route_spacing * std::cos(hm);
    y += world.route_spacing * std::sin(hm);
  }
  // Shift so the route starts at the origin.
  const auto origin = world.route_at(0.0);
  for (auto& r : world.route) {
    r.x -= origin.x;
    r.y -= origin.y;
  }
  for (double s = 0; s <= length + 1e-9; s += world.route_spacing) world.trajectory.push_back(route_pose(world, s, 0, 0));

  world.landmarks.reserve(config.landmarks);
  for (int i = 0; i < config.landmarks; ++i) {
    Landmark lm;
    const double s = uniform(rng, -8.0, length + 25.0);
    const double side = uniform(rng, 0, 1) < 0.5 ? -1.0 : 1.0;
    const double lateral = side * uniform(rng, 1.8, 6.0);
    const double height = uniform(rng, -1.3, 1.8);
    const auto r = world.route_at(s);
    lm.position = Vec3(r.x - lateral * std::sin(r.heading), r.y + lateral * std::cos(r.heading), height);
    lm.phase = uniform(rng, 0, 1);
    lm.base_intensity = landmark_intensity(lm, 0.0);
    lm.appearance_rate = uniform(rng, 0.3, 1.2);
    lm.pattern_freq = 1 + static_cast<int>(rng() % 3);
    lm.pattern_phase = uniform(rng, 0, 2 * std::numbers::pi);
    lm.descriptor_seed = rng();
    world.landmarks.push_back(lm);
  }
  for (const auto& pose : world.trajectory) {
    if (count_visible(world, pose, config.camera, config.z_min) < 8)
      throw Error(Errc::InvalidConfig, "landmark density too low: a trajectory pose sees fewer than 8 landmarks");
  }
  return world;
}

// ---------------------------------------------------------------------------
// Rendering

struct RenderedFrame {
  GrayImage left;
  GrayImage right;
  FeatureMap gt_map;
  DisparityMap disparity;
};

struct RenderOptions {
  int descriptor_dim = 32;
  double landmark_radius_m = 0.12;
  double pixel_noise = 0.01;
  double z_min = 1.0;
  bool with_map = true;
};

inline RenderOptions render_options(const SimConfig& c, bool with_map = true) {
  return {c.descriptor_dim, c.landmark_radius_m, c.pixel_noise, c.z_min, with_map};
}

// Ground-truth maps. Around each landmark's projected centre c the descriptor is a smooth
// field f(x - c) whose zncc between two offsets depends only on their difference, so soft
// matching recovers sub-pixel positions. Detection logits are distinct multiples of
// kLogitGap (a hard argmax per cell); the pixel nearest c outranks everything else and
// field pixels rank below background. Nearer anchors outrank farther ones.
inline constexpr double kLogitGap = 40.0;
inline constexpr int kFieldRadius = 5;       // pixels, square window around the anchor
inline constexpr double kFieldFreq = 0.29;   // radians per pixel
inline constexpr double kFieldAlpha = 1.0;   // weight of the landmark identity
inline constexpr double kFieldBeta = 1.0;    // weight of each position harmonic
inline constexpr double kBodyScore = 0.25;
inline constexpr double kBodyDescriptorMix = 0.6;

/// Orthonormal zero-mean columns: the landmark identity followed by four position directions.
inline Eigen::MatrixXd landmark_field_basis(const Landmark& lm, int dim) {
  if (dim < 6) throw Error(Errc::InvalidConfig, "descriptor_dim must be >= 6 for ground-truth maps");
  Eigen::MatrixXd basis(dim, 5);
  basis.col(0) = landmark_descriptor(lm, dim);
  Rng rng(splitmix64(lm.descriptor_seed ^ 0x6669656c64ull));
  for (int k = 1; k < 5; ++k)
    for (int i = 0; i < dim; ++i) basis(i, k) = gaussian(rng);
  for (int k = 0; k < 5; ++k) {
    Eigen::VectorXd c = basis.col(k).array() - basis.col(k).mean();
    for (int j = 0; j < k; ++j) c -= c.dot(basis.col(j)) * basis.col(j);
    basis.col(k) = c / c.norm();
  }
  return basis;
}

inline Eigen::VectorXd landmark_field(const Eigen::MatrixXd& basis, double du, double dv) {
  Eigen::Matrix<double, 5, 1> c;
  c << kFieldAlpha, kFieldBeta * std::cos(kFieldFreq * du), kFieldBeta * std::sin(kFieldFreq * du),
      kFieldBeta * std::cos(kFieldFreq * dv), kFieldBeta * std::sin(kFieldFreq * dv);
  return basis * c;
}

/// Renders the stereo pair for a camera-to-world pose. Appearance changes photometry only:
/// global gain, per-landmark intensity and an additive shadow gradient.
inline RenderedFrame render_frame(const World& world, const Transform& pose_wc, double appearance,
                                  const StereoCamera& cam, std::uint64_t noise_seed, const RenderOptions& opt = {}) {
  const int w = cam.width, h = cam.height;
  struct Splat {
    double u, v, d, z, radius;
    std::size_t landmark;
  };
  const Transform t_cw = inverse(pose_wc);
  std::vector<Splat> splats;
  for (std::size_t i = 0; i < world.landmarks.size(); ++i) {
    const Vec3 p = apply(t_cw, world.landmarks[i].position);
    if (p.z() <= opt.z_min) continue;
    const Vec3 y = project(cam, p);
    const double radius = std::clamp(cam.fu * opt.landmark_radius_m / p.z(), 1.2, 6.0);
    if (y.x() + radius < -1 || y.x() - radius > w || y.y() + radius < -1 || y.y() - radius > h) continue;
    splats.push_back({y.x(), y.y(), y.z(), p.z(), radius, i});
  }
  std::stable_sort(splats.begin(), splats.end(), [](const Splat& a, const Splat& b) { return a.z > b.z; });

  const double gain = 1.0 - 0.4 * appearance;
  const double shadow_angle = 2 * std::numbers::pi * (0.15 + appearance);
  const double shadow_amp = 0.3 * appearance;
  auto shadow = [&](double u, double v) {
    return shadow_amp * (std::cos(shadow_angle) * (u / w - 0.5) + std::sin(shadow_angle) * (v / h - 0.5));
  };

  Eigen::MatrixXd left(h, w), right(h, w);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) left(v, u) = right(v, u) = gain * 0.35 + shadow(u, v);

  RenderedFrame out;
  out.disparity = DisparityMap(h, w);
  auto rng = make_rng(noise_seed, {7});

  for (const auto& sp : splats) {
    const auto& lm = world.landmarks[sp.landmark];
    const double base = gain * landmark_intensity(lm, appearance);
    const int v0 = std::max(0, static_cast<int>(std::floor(sp.v - sp.radius - 1)));
    const int v1 = std::min(h - 1, static_cast<int>(std::ceil(sp.v + sp.radius + 1)));
    for (int pass = 0; pass < 2; ++pass) {
      const double cu = pass == 0 ? sp.u : sp.u - sp.d;
      Eigen::MatrixXd& img = pass == 0 ? left : right;
      const int u0 = std::max(0, static_cast<int>(std::floor(cu - sp.radius - 1)));
      const int u1 = std::min(w - 1, static_cast<int>(std::ceil(cu + sp.radius + 1)));
      for (int v = v0; v <= v1; ++v) {
        for (int u = u0; u <= u1; ++u) {
          const double du = u - cu, dv = v - sp.v;
          const double rho = std::hypot(du, dv);
          const double coverage = std::clamp(sp.radius + 0.5 - rho, 0.0, 1.0);
          if (coverage <= 0) continue;
          const double pattern = rho > 0.5 ? std::cos(lm.pattern_freq * std::atan2(dv, du) + lm.pattern_phase) *
                                                 std::min(1.0, rho / sp.radius)
                                           : 0.0;
          const double value = base + gain * 0.18 * pattern + shadow(u, v);
          img(v, u) = (1 - coverage) * img(v, u) + coverage * value;
          if (pass == 0 && rho <= sp.radius) out.disparity.at(u, v) = static_cast<float>(sp.d);
        }
      }
    }
  }

  if (opt.with_map) {
    auto desc_rng = make_rng(noise_seed, {8});
    auto& map = out.gt_map;
    map = FeatureMap(h, w, opt.descriptor_dim);
    const Eigen::Index m = map.pixel_count();
    std::vector<int> rank(static_cast<std::size_t>(m));
    std::iota(rank.begin(), rank.end(), 0);
    std::shuffle(rank.begin(), rank.end(), desc_rng);
    for (Eigen::Index j = 0; j < m; ++j) {
      for (int c = 0; c < opt.descriptor_dim; ++c) map.descriptors(j, c) = gaussian(desc_rng);
      map.logits(j) = kLogitGap * (rank[static_cast<std::size_t>(j)] + m);
    }
    std::vector<Eigen::MatrixXd> bases;
    for (const auto& sp : splats) bases.push_back(landmark_field_basis(world.landmarks[sp.landmark], opt.descriptor_dim));

    // Halo pixels go to the landmark with the nearest projected centre; bodies are then
    // painted far to near on top, so occlusion follows depth.
    std::vector<double> owner_dist(static_cast<std::size_t>(m), std::numeric_limits<double>::infinity());
    for (int layer = 0; layer < 2; ++layer) {
      for (std::size_t k = 0; k < splats.size(); ++k) {
        const auto& sp = splats[k];
        const int au = static_cast<int>(std::lround(sp.u)), av = static_cast<int>(std::lround(sp.v));
        const int reach = std::max(kFieldRadius, static_cast<int>(std::ceil(sp.radius)));
        for (int v = std::max(0, av - reach); v <= std::min(h - 1, av + reach); ++v) {
          for (int u = std::max(0, au - reach); u <= std::min(w - 1, au + reach); ++u) {
            const double du = u - sp.u, dv = v - sp.v;
            const bool body = std::hypot(du, dv) <= sp.radius;
            const bool field = std::abs(u - au) <= kFieldRadius && std::abs(v - av) <= kFieldRadius;
            if (body != (layer == 1) || !(field || body)) continue;
            const auto j = map.index(u, v);
            if (layer == 0) {
              const double dist = std::hypot(du, dv);
              if (dist >= owner_dist[static_cast<std::size_t>(j)]) continue;
              owner_dist[static_cast<std::size_t>(j)] = dist;
            }
            if (field) {
              map.descriptors.row(j) = landmark_field(bases[k], du, dv).transpose();
              map.scores(j) = 1.0;
              map.logits(j) = kLogitGap * rank[static_cast<std::size_t>(j)];
            } else {
              Eigen::VectorXd noise(opt.descriptor_dim);
              for (int c = 0; c < opt.descriptor_dim; ++c) noise(c) = gaussian(desc_rng);
              map.descriptors.row(j) = (kBodyDescriptorMix * bases[k].col(0) +
                                        std::sqrt(1 - kBodyDescriptorMix * kBodyDescriptorMix) * noise /
                                            std::sqrt(static_cast<double>(opt.descriptor_dim)))
                                           .transpose();
              map.scores(j) = kBodyScore;
            }
            if (layer == 1 && u == au && v == av) map.logits(j) = kLogitGap * (2.0 * m + 1.0 + static_cast<double>(k));
          }
        }
      }
    }
  }

  auto quantize = [&](const Eigen::MatrixXd& img) {
    GrayImage g(w, h);
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        const double x = std::clamp(img(v, u) + gaussian(rng, opt.pixel_noise), 0.0, 1.0);
        g.at(u, v) = static_cast<std::uint8_t>(std::lround(x * 255.0));
      }
    return g;
  };
  out.left = quantize(left);
  out.right = quantize(right);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset

struct Frame {
  int index = 0;
  GrayImage left;
  GrayImage right;
  std::optional<Transform> vo_edge;  // T_{n-1,n}: pose of frame n expressed in frame n-1
  std::optional<Transform> gt_pose;  // camera-to-world; evaluation only, never loaded from disk here
  std::optional<double> gt_arc_length;
  DisparityMap disparity;
};

struct Experience {
  int id = 0;
  int collection_index = 0;
  double appearance = 0;
  std::vector<Frame> frames;

  int size() const { return static_cast<int>(frames.size()); }
};

struct Dataset {
  StereoCamera camera;
  int descriptor_dim = 32;
  int nominal_frames = 0;
  bool has_maps = false;
  std::filesystem::path root;  // set when loaded from or saved to disk
  std::vector<Experience> experiences;

  const Experience& experience(int id) const {
    for (const auto& e : experiences)
      if (e.id == id) return e;
    throw Error(Errc::InvalidConfig, "unknown experience id " + std::to_string(id));
  }
  std::filesystem::path experience_dir(int id) const { return root / ("exp_" + std::to_string(id)); }
  std::filesystem::path map_path(int exp, int frame) const {
    return experience_dir(exp) / ("frame_" + std::to_string(frame) + ".slfm");
  }
};

/// VO edges from ground-truth poses with per-edge multiplicative noise:
/// translation sigma = drift * step length per axis, rotation sigma = drift * 0.5 deg per axis.
inline std::vector<Transform> simulated_vo(const Experience& exp, double drift, std::uint64_t seed) {
  if (drift < 0) throw Error(Errc::InvalidConfig, "drift must be non-negative");
  std::vector<Transform> edges;
  auto rng = make_rng(seed, {static_cast<std::uint64_t>(exp.id), 0x766fu});
  for (std::size_t n = 1; n < exp.frames.size(); ++n) {
    if (!exp.frames[n - 1].gt_pose || !exp.frames[n].gt_pose)
      throw Error(Errc::InvalidConfig, "simulated_vo needs ground-truth poses");
    Transform edge = compose(inverse(*exp.frames[n - 1].gt_pose), *exp.frames[n].gt_pose);
    if (drift > 0) {
      const double sigma_t = drift * edge.translation.norm();
      const double sigma_r = drift * 0.5 * std::numbers::pi / 180.0;
      Vec3 omega, dt;
      for (int k = 0; k < 3; ++k) omega(k) = gaussian(rng, sigma_r);
      for (int k = 0; k < 3; ++k) dt(k) = gaussian(rng, sigma_t);
      edge = compose(edge, Transform::from_axis_angle(omega, dt));
    }
    edges.push_back(edge);
  }
  return edges;
}

/// In-memory simulation: world plus a dataset with ground truth attached.
struct Simulation {
  SimConfig config;
  std::uint64_t seed = 0;
  World world;
  Dataset dataset;

  std::uint64_t frame_seed(int exp, int frame) const {
    return derive_seed(seed, {3, static_cast<std::uint64_t>(exp), static_cast<std::uint64_t>(frame)});
  }

  /// Re-renders a frame, including its dense ground-truth map.
  RenderedFrame render(int exp, int frame) const {
    const auto& e = dataset.experience(exp);
    return render_frame(world, *e.frames.at(frame).gt_pose, e.appearance, config.camera, frame_seed(exp, frame),
                        render_options(config, true));
  }
};

inline Simulation simulate(const SimConfig& config, std::uint64_t seed) {
  config.validate();
  Simulation sim;
  sim.config = config;
  sim.seed = seed;
  sim.world = generate_world(config, seed);
  auto& ds = sim.dataset;
  ds.camera = config.camera;
  ds.descriptor_dim = config.descriptor_dim;
  ds.nominal_frames = config.frames;
  ds.has_maps = config.write_maps;
  const double length = config.route_length();
  const double deg = std::numbers::pi / 180.0;

  for (int e = 0; e < config.experiences; ++e) {
    auto rng = make_rng(seed, {2, static_cast<std::uint64_t>(e)});
    Experience exp;
    exp.id = e;
    exp.collection_index = e;
    exp.appearance = config.appearance_start + config.appearance_step * e;
    const int count =
        config.frames + static_cast<int>(rng() % (2 * config.frame_jitter + 1)) - config.frame_jitter;
    const double lateral = uniform(rng, -config.lateral_offset_m, config.lateral_offset_m);
    const double yaw = uniform(rng, -config.yaw_jitter_deg, config.yaw_jitter_deg) * deg;
    const double spacing = length / (count - 1);
    for (int n = 0; n < count; ++n) {
      double s = spacing * n;
      if (n > 0 && n < count - 1) s += uniform(rng, -0.15, 0.15) * spacing;
      Frame f;
      f.index = n;
      f.gt_arc_length = s;
      f.gt_pose = route_pose(sim.world, s, lateral * std::sin(std::numbers::pi * s / length),
                             yaw * std::sin(2 * std::numbers::pi * s / length));
      exp.frames.push_back(std::move(f));
    }
    const auto vo = simulated_vo(exp, config.drift, derive_seed(seed, {4}));
    for (std::size_t n = 1; n < exp.frames.size(); ++n) exp.frames[n].vo_edge = vo[n - 1];
    ds.experiences.push_back(std::move(exp));
  }

  struct Job {
    int exp, frame;
  };
  std::vector<Job> jobs;
  for (const auto& e : ds.experiences)
    for (const auto& f : e.frames) jobs.push_back({e.id, f.index});
  parallel_for(jobs.size(), [&](std::size_t i) {
    auto& exp = ds.experiences[jobs[i].exp];
    auto& frame = exp.frames[jobs[i].frame];
    auto r = render_frame(sim.world, *frame.gt_pose, exp.appearance, config.camera, sim.frame_seed(exp.id, frame.index),
                          render_options(config, false));
    frame.left = std::move(r.left);
    frame.right = std::move(r.right);
    frame.disparity = std::move(r.disparity);
  });
  return sim;
}

// ---------------------------------------------------------------------------
// Disk layout

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error(Errc::Io, "failed writing " + path.string());
}

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::CorruptDataset, "missing " + path.string());
  std::vector<nlohmann::json> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception&) {
      throw Error(Errc::CorruptDataset, path.string() + ": malformed JSON on line " + std::to_string(lineno));
    }
  }
  return rows;
}

}  // namespace detail

inline std::filesystem::path frame_path(const std::filesystem::path& exp_dir, int n, const std::string& suffix) {
  return exp_dir / ("frame_" + std::to_string(n) + suffix);
}

/// Writes images, disparity, VO and (when present) ground truth. Dense maps are written
/// separately by generate_dataset because they are re-rendered on demand.
inline void save_dataset(Dataset& ds, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  ds.root = root;
  nlohmann::json meta;
  meta["camera"] = to_json(ds.camera);
  meta["M"] = ds.experiences.size();
  meta["N"] = ds.nominal_frames;
  meta["descriptor_dim"] = ds.descriptor_dim;
  meta["has_maps"] = ds.has_maps;
  nlohmann::json appearance = nlohmann::json::array(), ids = nlohmann::json::array(),
                 counts = nlohmann::json::array();
  for (const auto& e : ds.experiences) {
    appearance.push_back(e.appearance);
    ids.push_back(e.id);
    counts.push_back(e.frames.size());
  }
  meta["appearance"] = appearance;
  meta["experience_ids"] = ids;
  meta["frame_counts"] = counts;
  detail::write_text(root / "meta.json", meta.dump(2) + "\n");

  for (const auto& e : ds.experiences) {
    const fs::path dir = ds.experience_dir(e.id);
    fs::create_directories(dir);
    std::string vo, gt;
    bool have_gt = true;
    for (const auto& f : e.frames) {
      write_pgm(f.left, frame_path(dir, f.index, ".pgm"));
      write_pgm(f.right, frame_path(dir, f.index, "_r.pgm"));
      if (!f.disparity.values.empty()) write_disparity(f.disparity, frame_path(dir, f.index, "_disp.slfm"));
      if (f.index > 0) {
        if (!f.vo_edge) throw Error(Errc::MissingVO, "frame " + std::to_string(f.index) + " has no VO edge");
        vo += to_json(*f.vo_edge).dump() + "\n";
      }
      if (f.gt_pose) {
        auto row = to_json(*f.gt_pose);
        row["frame"] = f.index;
        if (f.gt_arc_length) row["arc_length"] = *f.gt_arc_length;
        gt += row.dump() + "\n";
      } else {
        have_gt = false;
      }
    }
    detail::write_text(dir / "vo.jsonl", vo);
    if (have_gt) detail::write_text(dir / "gt.jsonl", gt);
  }
}

/// Loads everything except ground truth (see gt.hpp).
inline Dataset load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  Dataset ds;
  ds.root = root;
  const fs::path meta_path = root / "meta.json";
  std::ifstream in(meta_path);
  if (!in) throw Error(Errc::CorruptDataset, "missing " + meta_path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
    ds.camera = camera_from_json(meta.at("camera"));
    ds.nominal_frames = meta.at("N").get<int>();
    ds.descriptor_dim = meta.at("descriptor_dim").get<int>();
    ds.has_maps = meta.at("has_maps").get<bool>();
    const auto& ids = meta.at("experience_ids");
    const auto& counts = meta.at("frame_counts");
    const auto& appearance = meta.at("appearance");
    const auto m = meta.at("M").get<std::size_t>();
    if (ids.size() != m || counts.size() != m || appearance.size() != m)
      throw Error(Errc::CorruptDataset, meta_path.string() + ": experience lists disagree with M");
    for (std::size_t i = 0; i < m; ++i) {
      Experience e;
      e.id = ids[i].get<int>();
      e.collection_index = static_cast<int>(i);
      e.appearance = appearance[i].get<double>();
      e.frames.resize(counts[i].get<std::size_t>());
      ds.experiences.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(Errc::CorruptDataset, meta_path.string() + ": " + ex.what());
  }

  for (auto& e : ds.experiences) {
    const fs::path dir = ds.experience_dir(e.id);
    const auto vo_rows = detail::read_jsonl(dir / "vo.jsonl");
    if (vo_rows.size() + 1 != e.frames.size())
      throw Error(Errc::CorruptDataset, (dir / "vo.jsonl").string() + ": expected " +
                                            std::to_string(e.frames.size() - 1) + " edges");
    for (std::size_t n = 0; n < e.frames.size(); ++n) {
      auto& f = e.frames[n];
      f.index = static_cast<int>(n);
      f.left = read_pgm(frame_path(dir, f.index, ".pgm"));
      f.right = read_pgm(frame_path(dir, f.index, "_r.pgm"));
      if (f.left.width != ds.camera.width || f.left.height != ds.camera.height || f.right.width != f.left.width ||
          f.right.height != f.left.height)
        throw Error(Errc::CorruptDataset, "image size mismatch in frame " + std::to_string(n) + " of " + dir.string());
      const auto disp_path = frame_path(dir, f.index, "_disp.slfm");
      if (fs::exists(disp_path)) f.disparity = read_disparity(disp_path);
      if (n > 0) {
        try {
          f.vo_edge = transform_from_json(vo_rows[n - 1]);
        } catch (const Error& err) {
          throw Error(Errc::CorruptDataset, (dir / "vo.jsonl").string() + ": " + err.what());
        }
      }
    }
  }
  return ds;
}

/// Simulates, saves and (optionally) writes dense ground-truth maps.
inline Simulation generate_dataset(const SimConfig& config, std::uint64_t seed, const std::filesystem::path& root) {
  auto sim = simulate(config, seed);
  save_dataset(sim.dataset, root);
  if (config.write_maps) {
    struct Job {
      int exp, frame;
    };
    std::vector<Job> jobs;
    for (const auto& e : sim.dataset.experiences)
      for (const auto& f : e.frames) jobs.push_back({e.id, f.index});
    parallel_for(jobs.size(), [&](std::size_t i) {
      write_slfm(sim.render(jobs[i].exp, jobs[i].frame).gt_map, sim.dataset.map_path(jobs[i].exp, jobs[i].frame));
    });
  }
  return sim;
}

}  // namespace seqloc
