#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include <memory>

#include "seqloc/emtrain.hpp"
#include "seqloc/random.hpp"

namespace seqloc::fixtures {

/// A small random M-step problem: random images, a sloped disparity field, random
/// prototypes, a random frozen pose and a handful of source keypoints.
struct GradientInstance {
  GrayImage src_image, tgt_image;
  DisparityMap disparity;
  std::unique_ptr<FrameInputs> src, tgt;
  MStepProblem problem;
  RowMatrixXd prototypes;
};

inline std::unique_ptr<GradientInstance> make_gradient_instance(std::uint64_t seed, double tau = 5.0) {
  auto rng = make_rng(seed, {0x67726164});
  auto inst = std::make_unique<GradientInstance>();
  StereoCamera cam;
  cam.width = 20;
  cam.height = 16;
  cam.fu = cam.fv = 20;
  cam.cu = 10;
  cam.cv = 8;

  auto random_image = [&] {
    GrayImage img(cam.width, cam.height);
    for (auto& px : img.pixels) px = static_cast<std::uint8_t>(rng() % 256);
    return img;
  };
  inst->src_image = random_image();
  inst->tgt_image = random_image();
  inst->disparity = DisparityMap(cam.height, cam.width);
  const double base = uniform(rng, 2, 4), su = uniform(rng, -0.05, 0.05), sv = uniform(rng, -0.05, 0.05);
  for (int v = 0; v < cam.height; ++v)
    for (int u = 0; u < cam.width; ++u)
      inst->disparity.at(u, v) = static_cast<float>(base + su * u + sv * v + uniform(rng, 0, 0.3));

  AssignmentParams ap;
  ap.patch_radius = 1;
  ap.dilation = 1;
  ap.top_m = 3;
  const int k = 6, dim = 4;
  inst->src = std::make_unique<FrameInputs>(FrameInputs{compute_assignment(inst->src_image, k, ap), &inst->disparity});
  inst->tgt = std::make_unique<FrameInputs>(FrameInputs{compute_assignment(inst->tgt_image, k, ap), &inst->disparity});

  inst->prototypes = init_model(k, dim, derive_seed(seed, {1})).prototypes;
  auto& prob = inst->problem;
  prob.src = inst->src.get();
  prob.tgt = inst->tgt.get();
  prob.camera = cam;
  prob.tau = tau;
  prob.frozen.t_ts = Transform::from_axis_angle(Vec3(gaussian(rng, 0.05), gaussian(rng, 0.05), gaussian(rng, 0.05)),
                                                Vec3(gaussian(rng, 0.1), gaussian(rng, 0.1), gaussian(rng, 0.1)));
  const int n = 2 + static_cast<int>(rng() % 4);
  for (int i = 0; i < n; ++i) {
    const Vec2 q(uniform(rng, 1, cam.width - 2), uniform(rng, 1, cam.height - 2));
    prob.frozen.q_s.push_back(q);
    prob.frozen.p_s.push_back(backproject(cam, {q.x(), q.y(), sample_disparity(inst->disparity, q).value}));
  }
  return inst;
}

/// Relative L2 error between the analytic prototype gradient and central differences.
inline double gradient_relative_error(const GradientInstance& inst, double h = 1e-6) {
  RowMatrixXd analytic;
  keypoint_loss_and_grad(inst.prototypes, inst.problem, &analytic);
  const auto rows = inst.prototypes.rows(), cols = inst.prototypes.cols();
  const Eigen::VectorXd theta = Eigen::Map<const Eigen::VectorXd>(inst.prototypes.data(), rows * cols);
  const auto loss = [&](const Eigen::VectorXd& x) {
    const RowMatrixXd p = Eigen::Map<const RowMatrixXd>(x.data(), rows, cols);
    return keypoint_loss_and_grad(p, inst.problem, nullptr);
  };
  const Eigen::VectorXd numeric = finite_diff_grad(loss, theta, h);
  const Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(analytic.data(), rows * cols);
  return (a - numeric).norm() / std::max(numeric.norm(), 1e-12);
}

}  // namespace seqloc::fixtures
