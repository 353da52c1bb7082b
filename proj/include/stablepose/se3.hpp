#pragma once

// Rotation / rigid-transform arithmetic and the 6-vector pose encoding
// (translation + exponential coordinates) used by the diffusion process.
// Double precision throughout; angles in radians, lengths in meters.

#include <cmath>
#include <limits>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "stablepose/rng.hpp"

namespace stablepose {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

/// 6-vector pose encoding: entries 0..2 translation, 3..5 exponential
/// coordinates of the rotation (canonical branch, norm <= pi).
using PoseVec = Vec6;

inline Mat3 hat(const Vec3& w) {
  Mat3 m;
  m << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return m;
}

// Below this angle the Rodrigues coefficients switch to their 2nd-order
// series, which is exact to double precision there.
inline constexpr double kSmallAngle = 1e-8;

/// Rodrigues rotation about w/|w| by angle |w|. Total: expmap(0) = I.
inline Mat3 expmap(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const Mat3 K = hat(w);
  double a, b;  // R = I + a*K + b*K^2
  if (theta2 < kSmallAngle * kSmallAngle) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * K + b * (K * K);
}

/// Inverse of expmap, canonical branch: |logmap(R)| <= pi. At angles within
/// 1e-6 of pi the returned branch is chosen deterministically (first nonzero
/// axis component positive); the branch is not unique there.
inline Vec3 logmap(const Mat3& R) {
  // Quaternion extraction (Shepperd) stays well-conditioned at all angles,
  // unlike the acos-of-trace route which degrades near pi.
  Eigen::Quaterniond q(R);
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v(q.x(), q.y(), q.z());
  const double vn = v.norm();
  const double theta = 2.0 * std::atan2(vn, q.w());
  if (vn < kSmallAngle) {
    return (2.0 / q.w()) * v;  // theta ~ 2|v|, axis ~ v/|v|
  }
  Vec3 w = (theta / vn) * v;
  if (theta > M_PI - 1e-6) {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(w[i]) > 1e-9) {
        if (w[i] < 0.0) w = -w;
        break;
      }
    }
  }
  return w;
}

/// Orthonormality and determinant check, tolerance per entry.
inline bool is_rotation(const Mat3& R, double tol = 1e-9) {
  const Mat3 err = R.transpose() * R - Mat3::Identity();
  if (err.cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(R.determinant() - 1.0) <= tol;
}

/// Rigid transform: p_world = rotation * p_body + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return Pose{}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Pose compose(const Pose& other) const {
    // this * other, homogeneous-matrix product.
    return Pose{rotation * other.rotation,
                rotation * other.translation + translation};
  }

  Pose inverse() const {
    Mat3 rt = rotation.transpose();
    return Pose{rt, -(rt * translation)};
  }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

/// Additive translation noise, right-multiplied rotation noise:
/// t' = t + eps[0..3], R' = R * expmap(eps[3..6]).
inline Pose perturb_pose(const Pose& pose, const Vec6& eps) {
  return Pose{pose.rotation * expmap(eps.tail<3>()),
              pose.translation + eps.head<3>()};
}

inline PoseVec encode_pose(const Pose& pose) {
  PoseVec x;
  x.head<3>() = pose.translation;
  x.tail<3>() = logmap(pose.rotation);
  return x;
}

inline Pose decode_pose(const PoseVec& x) {
  // expmap wraps |e| > pi onto the canonical branch by construction.
  return Pose{expmap(x.tail<3>()), x.head<3>()};
}

/// Magnitude of the axis-angle representation of R1^T R2, in [0, pi].
inline double relative_rotation_angle(const Mat3& r1, const Mat3& r2) {
  return logmap(r1.transpose() * r2).norm();
}

/// Uniform rotation on SO(3) (normalized Gaussian quaternion).
inline Mat3 random_rotation(Rng& rng) {
  Eigen::Vector4d q;
  for (int i = 0; i < 4; ++i) q[i] = rng.normal();
  q.normalize();
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

inline constexpr double degrees(double radians) { return radians * (180.0 / M_PI); }
inline constexpr double radians(double degrees) { return degrees * (M_PI / 180.0); }

}  // namespace stablepose
