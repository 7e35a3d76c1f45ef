#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "seqloc/error.hpp"

namespace seqloc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Rigid transform T = [C r; 0 1]. `Transform{a_b}` maps points expressed in
/// frame b into frame a.
struct Transform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Transform identity() { return {}; }

  static Transform from_translation(const Vec3& r) { return {Mat3::Identity(), r}; }

  static Transform from_axis_angle(const Vec3& axis_angle, const Vec3& r = Vec3::Zero()) {
    const double angle = axis_angle.norm();
    if (angle == 0.0) return {Mat3::Identity(), r};
    return {Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix(), r};
  }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  bool operator==(const Transform&) const = default;
};

inline Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 fix = Mat3::Identity();
  fix(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * fix * svd.matrixV().transpose();
}

/// Projects the rotation block back onto SO(3).
inline Transform orthonormalized(const Transform& t) { return {nearest_rotation(t.rotation), t.translation}; }

inline Transform compose(const Transform& a_b, const Transform& b_c) {
  return {a_b.rotation * b_c.rotation, a_b.rotation * b_c.translation + a_b.translation};
}

inline Transform inverse(const Transform& t) {
  const Mat3 ct = t.rotation.transpose();
  return {ct, -ct * t.translation};
}

inline Vec3 apply(const Transform& t, const Vec3& p) { return t.rotation * p + t.translation; }

/// Squared norm of the translation, in m^2.
inline double sq_translation_distance(const Transform& t) { return t.translation.squaredNorm(); }

/// Left-to-right product of a chain, re-orthonormalized every 16 factors and at the end.
inline Transform compose_chain(std::span<const Transform> chain) {
  Transform acc;
  std::size_t count = 0;
  for (const auto& t : chain) {
    acc = compose(acc, t);
    if (++count % 16 == 0) acc = orthonormalized(acc);
  }
  return count > 0 ? orthonormalized(acc) : acc;
}

/// Rotation angle of C in radians.
/// Angle of a rotation in [0, pi]; atan2 keeps small angles accurate where acos would not.
inline double rotation_angle(const Mat3& c) {
  const Vec3 axis(c(2, 1) - c(1, 2), c(0, 2) - c(2, 0), c(1, 0) - c(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (c.trace() - 1.0));
}

inline bool is_valid_rotation(const Mat3& c, double tol = 1e-9) {
  return (c * c.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(c.determinant() - 1.0) <= tol;
}

// ---------------------------------------------------------------------------
// Stereo camera

/// Rectified stereo pair; left camera is the reference frame.
struct StereoCamera {
  double fu = 100.0;
  double fv = 100.0;
  double cu = 64.0;
  double cv = 48.0;
  double baseline = 0.25;
  int width = 128;
  int height = 96;

  void validate() const {
    if (!(fu > 0 && fv > 0 && baseline > 0) || width <= 0 || height <= 0 || cu < 0 || cu > width - 1 ||
        cv < 0 || cv > height - 1) {
      throw Error(Errc::InvalidConfig, "stereo camera parameters out of range");
    }
  }

  bool operator==(const StereoCamera&) const = default;
};

/// Maps a camera-frame point to [u_l, v_l, disparity].
inline Vec3 project(const StereoCamera& cam, const Vec3& p) {
  if (!(p.z() > 0.0)) throw Error(Errc::NonPositiveDepth, "point depth must be positive");
  const double inv_z = 1.0 / p.z();
  return {cam.fu * p.x() * inv_z + cam.cu, cam.fv * p.y() * inv_z + cam.cv, cam.fu * cam.baseline * inv_z};
}

/// Inverse stereo model: [u_l, v_l, d] -> camera-frame point.
inline Vec3 backproject(const StereoCamera& cam, const Vec3& y) {
  const double d = y.z();
  if (!(d > 0.0)) throw Error(Errc::NonPositiveDisparity, "disparity must be positive");
  const double s = cam.baseline / d;
  return {s * (y.x() - cam.cu), s * (cam.fu / cam.fv) * (y.y() - cam.cv), s * cam.fu};
}

/// Jacobian of backproject with respect to (u, v, d).
inline Eigen::Matrix3d backproject_jacobian(const StereoCamera& cam, const Vec3& y) {
  const double d = y.z();
  const double s = cam.baseline / d;
  Eigen::Matrix3d j = Eigen::Matrix3d::Zero();
  j(0, 0) = s;
  j(1, 1) = s * cam.fu / cam.fv;
  const Vec3 p = backproject(cam, y);
  j.col(2) = -p / d;
  return j;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const Transform& t) {
  const Mat4 m = t.matrix();
  nlohmann::json values = nlohmann::json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) values.push_back(m(r, c));
  return {{"matrix", values}};
}

inline Transform transform_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("matrix") || !j.at("matrix").is_array() || j.at("matrix").size() != 16)
    throw Error(Errc::CorruptDataset, "transform JSON must be {\"matrix\": [16 numbers]}");
  std::array<double, 16> v{};
  for (std::size_t i = 0; i < 16; ++i) {
    const auto& e = j.at("matrix")[i];
    if (!e.is_number()) throw Error(Errc::CorruptDataset, "transform matrix entries must be numbers");
    v[i] = e.get<double>();
  }
  Transform t;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) t.rotation(r, c) = v[r * 4 + c];
    t.translation(r) = v[r * 4 + 3];
  }
  if (!is_valid_rotation(t.rotation, 1e-6))
    throw Error(Errc::CorruptDataset, "transform rotation block is not a proper rotation");
  return t;
}

inline nlohmann::json to_json(const StereoCamera& cam) {
  return {{"fu", cam.fu}, {"fv", cam.fv}, {"cu", cam.cu},        {"cv", cam.cv},
          {"b", cam.baseline}, {"width", cam.width}, {"height", cam.height}};
}

inline StereoCamera camera_from_json(const nlohmann::json& j) {
  StereoCamera cam;
  try {
    cam.fu = j.at("fu").get<double>();
    cam.fv = j.at("fv").get<double>();
    cam.cu = j.at("cu").get<double>();
    cam.cv = j.at("cv").get<double>();
    cam.baseline = j.at("b").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CorruptDataset, std::string("camera JSON: ") + e.what());
  }
  cam.validate();
  return cam;
}

}  // namespace seqloc
