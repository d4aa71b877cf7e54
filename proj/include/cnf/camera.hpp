#pragma once

// Pinhole cameras and rays. Convention: right-handed camera frame, camera
// looks down -z, +y is up in the image, pixel (0,0) is the top-left corner
// of the image and pixel centers sit at half-integer coordinates.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "cnf/errors.hpp"

namespace cnf {

using Vec3 = std::array<double, 3>;

struct Intrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 0, height = 0;
};

/// Rigid pose as (t_x, t_y, t_z, r_x, r_y, r_z) with r an axis-angle vector.
using Pose6 = std::array<double, 6>;
using Pose34 = Eigen::Matrix<double, 3, 4>;

inline Pose34 pose6_to_matrix(const Pose6& p) {
  const Eigen::Vector3d r(p[3], p[4], p[5]);
  const double angle = r.norm();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  if (angle > 0) R = Eigen::AngleAxisd(angle, r / angle).toRotationMatrix();
  Pose34 m;
  m.leftCols<3>() = R;
  m.col(3) = Eigen::Vector3d(p[0], p[1], p[2]);
  return m;
}

inline Pose6 matrix_to_pose6(const Pose34& m) {
  const Eigen::AngleAxisd aa(Eigen::Matrix3d(m.leftCols<3>()));
  const Eigen::Vector3d r = aa.axis() * aa.angle();
  return {m(0, 3), m(1, 3), m(2, 3), r.x(), r.y(), r.z()};
}

/// Projects the rotation block onto SO(3) (nearest orthonormal matrix).
/// Returns the Frobenius distance moved.
inline double orthonormalize(Pose34& m) {
  Eigen::Matrix3d R = m.leftCols<3>();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d Q = svd.matrixU() * svd.matrixV().transpose();
  if (Q.determinant() < 0) {
    Eigen::Matrix3d U = svd.matrixU();
    U.col(2) *= -1;
    Q = U * svd.matrixV().transpose();
  }
  const double moved = (Q - R).norm();
  m.leftCols<3>() = Q;
  return moved;
}

struct Camera {
  Intrinsics intrinsics;
  Pose34 cam_to_world = Pose34::Identity();

  void validate() const {
    if (!(intrinsics.fx > 0 && intrinsics.fy > 0)) throw UsageError("camera: focal lengths must be positive");
    const Eigen::Matrix3d R = cam_to_world.leftCols<3>();
    if ((R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6)
      throw UsageError("camera: rotation is not orthonormal");
  }

  static Camera from_pose6(const Intrinsics& k, const Pose6& p) { return Camera{k, pose6_to_matrix(p)}; }
  Pose6 pose6() const { return matrix_to_pose6(cam_to_world); }
};

struct Ray {
  Vec3 origin{};
  Vec3 dir{};
  double t_near = 0;
  double t_far = 0;
};

/// Ray through continuous pixel coordinates (px, py).
inline Ray pixel_ray(const Camera& cam, double px, double py) {
  const auto& k = cam.intrinsics;
  const Eigen::Vector3d d_cam((px - k.cx) / k.fx, -(py - k.cy) / k.fy, -1.0);
  const Eigen::Vector3d d = (cam.cam_to_world.leftCols<3>() * d_cam).normalized();
  Ray r;
  r.origin = {cam.cam_to_world(0, 3), cam.cam_to_world(1, 3), cam.cam_to_world(2, 3)};
  r.dir = {d.x(), d.y(), d.z()};
  return r;
}

/// Ray through the center of integer pixel (col, row).
inline Ray pixel_center_ray(const Camera& cam, int col, int row) { return pixel_ray(cam, col + 0.5, row + 0.5); }

struct Aabb {
  Vec3 lo{0, 0, 0};
  Vec3 hi{1, 1, 1};

  void validate() const {
    for (int i = 0; i < 3; ++i)
      if (!(hi[i] > lo[i])) throw UsageError("aabb: degenerate along axis " + std::to_string(i));
  }

  /// Maps a world point into the unit cube, clamped against round-off.
  Vec3 to_unit(const Vec3& p) const {
    Vec3 u;
    for (int i = 0; i < 3; ++i) u[i] = std::clamp((p[i] - lo[i]) / (hi[i] - lo[i]), 0.0, 1.0);
    return u;
  }
};

/// Clips the ray to the box (slab test, t >= 0). Returns nullopt on a miss
/// or when the overlap is empty.
inline std::optional<Ray> clip_to_box(Ray r, const Aabb& box) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (r.dir[i] == 0.0) {
      if (r.origin[i] < box.lo[i] || r.origin[i] > box.hi[i]) return std::nullopt;
      continue;
    }
    double a = (box.lo[i] - r.origin[i]) / r.dir[i];
    double b = (box.hi[i] - r.origin[i]) / r.dir[i];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  if (!(t0 < t1)) return std::nullopt;
  r.t_near = t0;
  r.t_far = t1;
  return r;
}

/// Camera at `eye` looking at `target` with +z as world up.
inline Pose34 look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                      const Eigen::Vector3d& up = Eigen::Vector3d::UnitZ()) {
  const Eigen::Vector3d back = (eye - target).normalized();  // camera +z
  Eigen::Vector3d right = up.cross(back);
  if (right.norm() < 1e-12) right = Eigen::Vector3d::UnitX().cross(back);
  right.normalize();
  const Eigen::Vector3d cam_up = back.cross(right);
  Pose34 m;
  m.col(0) = right;
  m.col(1) = cam_up;
  m.col(2) = back;
  m.col(3) = eye;
  return m;
}

}  // namespace cnf
