#include <cmath>

#include "doctest.h"
#include "radreg/se3.hpp"
#include "test_util.hpp"

using namespace radreg;
using radreg::test::random_pose;

TEST_CASE("exp_map basic cases") {
  CHECK(exp_map(TangentVec::zero()).rotation.isApprox(Eigen::Matrix3d::Identity(), 1e-15));
  CHECK(exp_map(TangentVec::zero()).translation.norm() == 0.0);

  TangentVec z90;
  z90.omega = Eigen::Vector3d(0, 0, M_PI / 2);
  const Pose p = exp_map(z90);
  // independent Rodrigues evaluation for a z-axis quarter turn
  Eigen::Matrix3d expect;
  expect << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((p.rotation - expect).cwiseAbs().maxCoeff() < 1e-12);

  TangentVec t;
  t.nu = Eigen::Vector3d(5, 0, 0);
  const Pose q = exp_map(t);
  CHECK(q.rotation.isApprox(Eigen::Matrix3d::Identity(), 1e-15));
  CHECK((q.translation - Eigen::Vector3d(5, 0, 0)).norm() < 1e-15);
}

TEST_CASE("exp_map rejects non-finite input") {
  TangentVec xi;
  xi.omega[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(exp_map(xi), std::invalid_argument);
}

TEST_CASE("log_map basic cases and round trip") {
  const TangentVec z = log_map(Pose::identity());
  CHECK(z.norm() == 0.0);

  TangentVec z90;
  z90.omega = Eigen::Vector3d(0, 0, M_PI / 2);
  const TangentVec back = log_map(exp_map(z90));
  CHECK((back.omega - z90.omega).norm() < 1e-9);

  Rng rng(11);
  for (int k = 0; k < 1000; ++k) {
    TangentVec xi;
    const double ang = (M_PI - 0.1) * rng.next_double();
    Eigen::Vector3d axis(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian());
    axis.normalize();
    xi.omega = ang * axis;
    for (int i = 0; i < 3; ++i) xi.nu[i] = 30 * rng.next_gaussian();
    const TangentVec r = log_map(exp_map(xi));
    CHECK((r.omega - xi.omega).norm() < 1e-9);
    CHECK((r.nu - xi.nu).norm() < 1e-9);
  }
}

TEST_CASE("log_map branch ambiguity near pi") {
  TangentVec xi;
  xi.omega = Eigen::Vector3d(0, 0, M_PI - 1e-9);
  CHECK_THROWS_AS(log_map(exp_map(xi)), std::domain_error);
}

TEST_CASE("compose and inverse group axioms") {
  Rng rng(5);
  for (int k = 0; k < 100; ++k) {
    const Pose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    const Pose ai = compose(a, inverse(a));
    CHECK((ai.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(ai.translation.norm() < 1e-9);
    // associativity against the direct 4x4 homogeneous matrix product
    const Pose lhs = compose(compose(a, b), c);
    Eigen::Matrix4d A = Eigen::Matrix4d::Identity(), B = A, C = A;
    A.topLeftCorner<3, 3>() = a.rotation;
    A.topRightCorner<3, 1>() = a.translation;
    B.topLeftCorner<3, 3>() = b.rotation;
    B.topRightCorner<3, 1>() = b.translation;
    C.topLeftCorner<3, 3>() = c.rotation;
    C.topRightCorner<3, 1>() = c.translation;
    const Eigen::Matrix4d M = A * B * C;
    CHECK((lhs.rotation - M.topLeftCorner<3, 3>()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((lhs.translation - M.topRightCorner<3, 1>()).norm() < 1e-9);
  }
  Pose t1, t2;
  t1.translation = Eigen::Vector3d(1, 2, 3);
  t2.translation = Eigen::Vector3d(4, 5, 6);
  CHECK((compose(t1, t2).translation - Eigen::Vector3d(5, 7, 9)).norm() < 1e-15);
}

TEST_CASE("geodesic_sq fixtures") {
  const Pose id = Pose::identity();
  CHECK(geodesic_sq(id, id) == 0.0);

  TangentVec z90;
  z90.omega = Eigen::Vector3d(0, 0, M_PI / 2);
  CHECK(geodesic_sq(id, exp_map(z90), 1.0) == doctest::Approx(M_PI * M_PI / 4).epsilon(1e-9));

  Pose a, b;
  a.translation = Eigen::Vector3d(0, 0, 0);
  b.translation = Eigen::Vector3d(3, 4, 0);
  CHECK(geodesic_sq(a, b, 5.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("geodesic_sq symmetry, positivity, rotational left-invariance") {
  Rng rng(7);
  for (int k = 0; k < 1000; ++k) {
    const Pose a = random_pose(rng), b = random_pose(rng);
    const double d = geodesic_sq(a, b);
    CHECK(d >= 0.0);
    CHECK(d == doctest::Approx(geodesic_sq(b, a)).epsilon(1e-9));
    if (k < 100) {
      const Pose g = random_pose(rng);
      // rotational term only: strip translations
      Pose ar = a, br = b, gar = compose(g, a), gbr = compose(g, b);
      ar.translation.setZero();
      br.translation.setZero();
      gar.translation.setZero();
      gbr.translation.setZero();
      CHECK(geodesic_sq(ar, br) == doctest::Approx(geodesic_sq(gar, gbr)).epsilon(1e-7));
    }
  }
  const Pose a = random_pose(rng);
  CHECK(geodesic_sq(a, a) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("geodesic_grad matches central differences") {
  Rng rng(13);
  const double h = 1e-5;
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const Pose a = random_pose(rng, 0.7, 15.0), b = random_pose(rng, 0.7, 15.0);
    const TangentVec g = geodesic_grad(a, b);
    double gmax = 1e-12;
    for (int i = 0; i < 6; ++i) gmax = std::max(gmax, std::abs(g.coeff(i)));
    for (int i = 0; i < 6; ++i) {
      TangentVec e;
      e.coeff(i) = h;
      TangentVec en;
      en.coeff(i) = -h;
      const double fd =
          (geodesic_sq(compose(a, exp_map(e)), b) - geodesic_sq(compose(a, exp_map(en)), b)) /
          (2 * h);
      worst = std::max(worst, std::abs(fd - g.coeff(i)) / gmax);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("geodesic_grad at minimum and trans_scale scaling") {
  Rng rng(17);
  const Pose a = random_pose(rng);
  const TangentVec g0 = geodesic_grad(a, a);
  CHECK(g0.norm() < 1e-12);

  const Pose b = random_pose(rng);
  const TangentVec g1 = geodesic_grad(a, b, 10.0);
  const TangentVec g2 = geodesic_grad(a, b, 20.0);
  CHECK((g2.nu - 0.25 * g1.nu).norm() < 1e-12 * g1.nu.norm());
  CHECK((g2.omega - g1.omega).norm() < 1e-12);
}

TEST_CASE("sample_pose determinism and degenerate distribution") {
  PoseDistribution d0;  // all std zero
  const Pose p0 = sample_pose(d0, 42);
  CHECK(p0.rotation.isApprox(Eigen::Matrix3d::Identity(), 1e-15));
  CHECK(p0.translation.norm() == 0.0);

  PoseDistribution d;
  d.rot_std_deg = Eigen::Vector3d(10, 10, 10);
  d.trans_std_mm = Eigen::Vector3d(30, 15, 15);
  const Pose p1 = sample_pose(d, 99);
  const Pose p2 = sample_pose(d, 99);
  CHECK((p1.rotation - p2.rotation).cwiseAbs().maxCoeff() == 0.0);
  CHECK((p1.translation - p2.translation).norm() == 0.0);
  CHECK(pose_is_valid(p1));
}

TEST_CASE("sample_pose per-axis statistics") {
  PoseDistribution d;
  d.rot_std_deg = Eigen::Vector3d(20, 20, 20);
  d.trans_std_mm = Eigen::Vector3d(25, 25, 25);
  const int n = 10000;
  Eigen::Vector3d ss_rot = Eigen::Vector3d::Zero(), ss_tr = Eigen::Vector3d::Zero();
  for (int k = 0; k < n; ++k) {
    const Pose p = sample_pose(d, 1000 + k);
    // intrinsic X-Y-Z Euler extraction: R = Rx(a) Ry(b) Rz(c)
    const Eigen::Matrix3d& R = p.rotation;
    const double a = std::atan2(-R(1, 2), R(2, 2));
    const double b = std::asin(std::clamp(R(0, 2), -1.0, 1.0));
    const double c = std::atan2(-R(0, 1), R(0, 0));
    ss_rot += Eigen::Vector3d(a * a, b * b, c * c);
    ss_tr += p.translation.cwiseProduct(p.translation);
  }
  const Eigen::Vector3d std_rot_deg = (ss_rot / n).cwiseSqrt() * 180.0 / M_PI;
  const Eigen::Vector3d std_tr = (ss_tr / n).cwiseSqrt();
  for (int i = 0; i < 3; ++i) {
    CHECK(std_rot_deg[i] == doctest::Approx(20.0).epsilon(0.05));
    CHECK(std_tr[i] == doctest::Approx(25.0).epsilon(0.05));
  }
}

TEST_CASE("pose JSON round trip") {
  Rng rng(23);
  for (int k = 0; k < 20; ++k) {
    const Pose p = random_pose(rng);
    const Pose q = pose_from_json(pose_to_json(p));
    // serialization goes through log_map/exp_map; those round trip to ~1e-9
    // near theta = pi, not machine epsilon
    CHECK((p.rotation - q.rotation).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((p.translation - q.translation).norm() < 1e-8 * (1 + p.translation.norm()));
  }
}
