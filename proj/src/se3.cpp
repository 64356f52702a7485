#include "radreg/se3.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "radreg/rng.hpp"
#include "json.hpp"

namespace radreg {

namespace {

constexpr double kSmallAngle = 1e-8;

Eigen::Matrix3d hat(const Eigen::Vector3d& w) {
  Eigen::Matrix3d m;
  m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return m;
}

void check_finite(const TangentVec& xi) {
  if (!xi.omega.allFinite() || !xi.nu.allFinite()) {
    throw std::invalid_argument("exp_map: non-finite tangent vector");
  }
}

}  // namespace

bool pose_is_valid(const Pose& p, double tol) {
  const Eigen::Matrix3d err = p.rotation.transpose() * p.rotation - Eigen::Matrix3d::Identity();
  return err.cwiseAbs().maxCoeff() <= tol && std::abs(p.rotation.determinant() - 1.0) <= tol &&
         p.translation.allFinite();
}

Pose exp_map(const TangentVec& xi) {
  check_finite(xi);
  const double theta = xi.omega.norm();
  const Eigen::Matrix3d W = hat(xi.omega);
  const Eigen::Matrix3d W2 = W * W;
  double a, b, c;  // R = I + a W + b W^2; V = I + b W + c W^2
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0;
    b = 0.5 - t2 / 24.0;
    c = 1.0 / 6.0 - t2 / 120.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / (theta * theta);
    c = (theta - std::sin(theta)) / (theta * theta * theta);
  }
  Pose p;
  p.rotation = Eigen::Matrix3d::Identity() + a * W + b * W2;
  const Eigen::Matrix3d V = Eigen::Matrix3d::Identity() + b * W + c * W2;
  p.translation = V * xi.nu;
  return p;
}

TangentVec log_map(const Pose& p) {
  if (!pose_is_valid(p)) {
    throw std::invalid_argument("log_map: input is not a valid pose");
  }
  const Eigen::Matrix3d& R = p.rotation;
  const double cos_theta = std::min(1.0, std::max(-1.0, (R.trace() - 1.0) * 0.5));
  const double theta = std::acos(cos_theta);
  if (theta > M_PI - 1e-6) {
    throw std::domain_error("log_map: rotation angle too close to pi (branch ambiguity)");
  }
  Eigen::Vector3d omega;
  const Eigen::Vector3d axis_raw(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  if (theta < kSmallAngle) {
    omega = 0.5 * axis_raw;  // sin(theta)/theta ~ 1
  } else {
    omega = theta / (2.0 * std::sin(theta)) * axis_raw;
  }
  // V^{-1} = I - W/2 + k W^2, k = (1 - theta*cos(theta/2)/(2 sin(theta/2))) / theta^2
  const Eigen::Matrix3d W = hat(omega);
  double k;
  if (theta < kSmallAngle) {
    k = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    k = (1.0 - theta * std::cos(theta * 0.5) / (2.0 * std::sin(theta * 0.5))) / (theta * theta);
  }
  const Eigen::Matrix3d Vinv = Eigen::Matrix3d::Identity() - 0.5 * W + k * W * W;
  TangentVec xi;
  xi.omega = omega;
  xi.nu = Vinv * p.translation;
  return xi;
}

Pose compose(const Pose& a, const Pose& b) {
  Pose p;
  p.rotation = a.rotation * b.rotation;
  p.translation = a.rotation * b.translation + a.translation;
  return p;
}

Pose inverse(const Pose& a) {
  Pose p;
  p.rotation = a.rotation.transpose();
  p.translation = -(p.rotation * a.translation);
  return p;
}

double geodesic_sq(const Pose& a, const Pose& b, double trans_scale_mm) {
  if (trans_scale_mm <= 0.0) {
    throw std::invalid_argument("geodesic_sq: trans_scale must be positive");
  }
  Pose rel;
  rel.rotation = a.rotation.transpose() * b.rotation;
  rel.translation.setZero();
  const TangentVec xi = log_map(rel);
  const double dt = (a.translation - b.translation).squaredNorm();
  return xi.omega.squaredNorm() + dt / (trans_scale_mm * trans_scale_mm);
}

TangentVec geodesic_grad(const Pose& a, const Pose& b, double trans_scale_mm) {
  if (trans_scale_mm <= 0.0) {
    throw std::invalid_argument("geodesic_grad: trans_scale must be positive");
  }
  Pose rel;
  rel.rotation = a.rotation.transpose() * b.rotation;
  rel.translation.setZero();
  const Eigen::Vector3d phi = log_map(rel).omega;
  TangentVec g;
  // d/de |log(exp(-e w) R_rel)|^2 = -2 phi . w  (phi^T Jl^{-1}(phi) = phi^T)
  g.omega = -2.0 * phi;
  g.nu = 2.0 * (a.rotation.transpose() * (a.translation - b.translation)) /
         (trans_scale_mm * trans_scale_mm);
  return g;
}

Pose sample_pose(const PoseDistribution& dist, uint64_t rng_seed) {
  if ((dist.rot_std_deg.array() < 0).any() || (dist.trans_std_mm.array() < 0).any()) {
    throw std::invalid_argument("sample_pose: negative standard deviation");
  }
  Rng rng(rng_seed);
  const double deg2rad = M_PI / 180.0;
  Eigen::Vector3d angles, trans;
  for (int i = 0; i < 3; ++i) {
    angles[i] = (dist.rot_mean_deg[i] + dist.rot_std_deg[i] * rng.next_gaussian()) * deg2rad;
  }
  for (int i = 0; i < 3; ++i) {
    trans[i] = dist.trans_mean_mm[i] + dist.trans_std_mm[i] * rng.next_gaussian();
  }
  const auto rot_about = [](int axis, double ang) {
    TangentVec xi;
    xi.omega[axis] = ang;
    return exp_map(xi).rotation;
  };
  Pose p;
  // intrinsic X-Y-Z
  p.rotation = rot_about(0, angles[0]) * rot_about(1, angles[1]) * rot_about(2, angles[2]);
  p.translation = trans;
  return p;
}

std::string pose_to_json(const Pose& p) {
  const TangentVec xi = log_map(p);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "{\"rot_axis_angle_rad\":[%.17g,%.17g,%.17g],\"trans_mm\":[%.17g,%.17g,%.17g]}",
                xi.omega.x(), xi.omega.y(), xi.omega.z(), p.translation.x(), p.translation.y(),
                p.translation.z());
  return buf;
}

Pose pose_from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  TangentVec xi;
  for (int i = 0; i < 3; ++i) xi.omega[i] = j.at("rot_axis_angle_rad").at(i).get<double>();
  Pose p = exp_map(xi);
  for (int i = 0; i < 3; ++i) p.translation[i] = j.at("trans_mm").at(i).get<double>();
  return p;
}

}  // namespace radreg
