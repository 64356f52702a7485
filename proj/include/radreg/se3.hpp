#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

namespace radreg {

/// Rigid transform: x_out = rotation * x_in + translation (mm).
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose identity() { return {}; }
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }
};

/// se(3) coordinates: omega in radians, nu in mm.
struct TangentVec {
  Eigen::Vector3d omega = Eigen::Vector3d::Zero();
  Eigen::Vector3d nu = Eigen::Vector3d::Zero();

  static TangentVec zero() { return {}; }
  double& coeff(int i) { return i < 3 ? omega[i] : nu[i - 3]; }
  double coeff(int i) const { return i < 3 ? omega[i] : nu[i - 3]; }
  double norm() const { return std::sqrt(omega.squaredNorm() + nu.squaredNorm()); }
};

/// Zero-mean by default; per-axis standard deviations.
struct PoseDistribution {
  Eigen::Vector3d rot_std_deg = Eigen::Vector3d::Zero();
  Eigen::Vector3d trans_std_mm = Eigen::Vector3d::Zero();
  Eigen::Vector3d rot_mean_deg = Eigen::Vector3d::Zero();
  Eigen::Vector3d trans_mean_mm = Eigen::Vector3d::Zero();
};

bool pose_is_valid(const Pose& p, double tol = 1e-6);

Pose exp_map(const TangentVec& xi);
TangentVec log_map(const Pose& p);
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& a);

/// Squared geodesic distance: |log(R_a^T R_b)|^2 + |t_a - t_b|^2 / trans_scale^2.
double geodesic_sq(const Pose& a, const Pose& b, double trans_scale_mm = 30.0);

/// Gradient of geodesic_sq with respect to a right-perturbation of `a`.
TangentVec geodesic_grad(const Pose& a, const Pose& b, double trans_scale_mm = 30.0);

/// Rotation from three intrinsic X-Y-Z Euler angles (R = Rx * Ry * Rz),
/// translation per axis. Deterministic for a fixed seed.
Pose sample_pose(const PoseDistribution& dist, uint64_t rng_seed);

std::string pose_to_json(const Pose& p);
Pose pose_from_json(const std::string& json_text);

}  // namespace radreg
