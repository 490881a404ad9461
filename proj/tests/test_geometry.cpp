#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "doctest.h"
#include "multibarf/error.hpp"
#include "multibarf/geometry.hpp"

using namespace mbarf;

namespace {

Eigen::Matrix4d twist_matrix(const Twist& t) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m.topLeftCorner<3, 3>() = detail::hat(t.omega);
  m.topRightCorner<3, 1>() = t.v;
  return m;
}

Twist random_twist(std::mt19937_64& rng, double max_angle) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, max_angle);
  Vec3 axis(n(rng), n(rng), n(rng));
  return {axis.normalized() * u(rng), Vec3(n(rng), n(rng), n(rng))};
}

RigidTransform random_pose(std::mt19937_64& rng) { return se3_exp(random_twist(rng, 3.0)); }

}  // namespace

TEST_CASE("se3_exp matches the matrix exponential") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    // Include angles inside the series branch.
    const Twist t = random_twist(rng, i % 4 == 0 ? 5e-3 : 3.1);
    const Eigen::Matrix4d expected = twist_matrix(t).exp();
    const RigidTransform got = se3_exp(t);
    CHECK((got.rotation - expected.topLeftCorner<3, 3>()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((got.translation - expected.topRightCorner<3, 1>()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("se3_exp at zero is the identity") {
  const RigidTransform p = se3_exp(Twist{});
  CHECK(p.rotation == Mat3::Identity());
  CHECK(p.translation == Vec3::Zero());
}

TEST_CASE("se3_exp rejects non-finite input") {
  Twist t;
  t.omega.x() = std::nan("");
  CHECK_THROWS_AS(se3_exp(t), Error);
}

TEST_CASE("se3_log inverts se3_exp") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const Twist t = random_twist(rng, i % 3 == 0 ? 1e-3 : 3.0);
    const Twist back = se3_log(se3_exp(t));
    CHECK((back.as_vector() - t.as_vector()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("se3_log refuses rotations at pi") {
  RigidTransform p;
  p.rotation = Eigen::AngleAxisd(std::numbers::pi, Vec3::UnitZ()).toRotationMatrix();
  try {
    (void)se3_log(p);
    FAIL("expected a chart boundary error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kChartBoundary);
  }
}

TEST_CASE("apply_twist keeps the initial pose at zero and stays orthonormal") {
  std::mt19937_64 rng(3);
  const RigidTransform init = random_pose(rng);
  CHECK(apply_twist(Twist{}, init).rotation.isApprox(init.rotation, 1e-15));
  for (int i = 0; i < 50; ++i) {
    const RigidTransform p = apply_twist(random_twist(rng, 2.0), init);
    CHECK(p.orthonormality_error() < 1e-12);
  }
}

TEST_CASE("apply_twist perturbs the camera in its own frame") {
  // A pure translation twist moves the camera center by -R0 v.
  std::mt19937_64 rng(4);
  const RigidTransform init = random_pose(rng);
  const Vec3 v(0.1, -0.2, 0.3);
  const RigidTransform p = apply_twist(Twist(Vec3::Zero(), v), init);
  CHECK((p.translation - (init.translation - init.rotation * v)).norm() < 1e-14);
}

TEST_CASE("apply_twist_jacobian matches central differences") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const RigidTransform init = random_pose(rng);
    const Twist t = random_twist(rng, trial % 2 == 0 ? 1e-4 : 1.0);
    const PoseJacobian j = apply_twist_jacobian(t, init);
    const double h = 1e-6;
    for (int k = 0; k < 6; ++k) {
      Eigen::Matrix<double, 6, 1> xp = t.as_vector(), xm = t.as_vector();
      xp(k) += h;
      xm(k) -= h;
      const RigidTransform pp = apply_twist(Twist::from_vector(xp), init);
      const RigidTransform pm = apply_twist(Twist::from_vector(xm), init);
      Eigen::Matrix<double, 12, 1> d;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) d(3 * r + c) = (pp.rotation(r, c) - pm.rotation(r, c)) / (2 * h);
      d.tail<3>() = (pp.translation - pm.translation) / (2 * h);
      CHECK((j.col(k) - d).cwiseAbs().maxCoeff() < 1e-7);
    }
  }
}

TEST_CASE("pixel_to_ray follows the pinhole convention") {
  Intrinsics k{20.0, 20.0, 32.0, 24.0, 64, 48};
  const RigidTransform id;
  const Ray center = pixel_to_ray(k, id, {32.0, 24.0}, 1.0, 5.0);
  CHECK((center.direction - Vec3(0, 0, -1)).norm() < 1e-15);
  CHECK(center.origin == Vec3::Zero());
  CHECK(center.near == 1.0);
  CHECK(center.far == 5.0);

  // Right of center is +x, below center is -y.
  CHECK(pixel_to_ray(k, id, {40.0, 24.0}, 1.0, 5.0).direction.x() > 0.0);
  CHECK(pixel_to_ray(k, id, {32.0, 40.0}, 1.0, 5.0).direction.y() < 0.0);

  // One focal length off axis is 45 degrees.
  const Ray diag = pixel_to_ray(k, id, {52.0, 4.0}, 1.0, 5.0);
  CHECK((diag.direction - Vec3(1.0, 1.0, -1.0).normalized()).norm() < 1e-15);

  CHECK(pixel_center(3, 7).u == 3.5);
  CHECK(pixel_center(3, 7).v == 7.5);
}

TEST_CASE("pixel_to_ray transforms into the world frame") {
  Intrinsics k{40.0, 40.0, 8.0, 8.0, 16, 16};
  RigidTransform pose;
  pose.rotation = Eigen::AngleAxisd(0.5, Vec3::UnitY()).toRotationMatrix();
  pose.translation = Vec3(1, 2, 3);
  const Ray r = pixel_to_ray(k, pose, {5.5, 9.5}, 0.5, 4.0);
  CHECK((r.origin - pose.translation).norm() < 1e-15);
  CHECK((r.direction - pose.rotation * camera_direction(k, {5.5, 9.5})).norm() < 1e-15);
  CHECK(std::abs(r.direction.norm() - 1.0) < 1e-15);
}

TEST_CASE("pixel_to_ray rejects pixels outside the image and bad bounds") {
  Intrinsics k{10.0, 10.0, 4.0, 4.0, 8, 8};
  CHECK_THROWS_AS(pixel_to_ray(k, {}, {8.5, 1.0}, 1.0, 2.0), Error);
  CHECK_THROWS_AS(pixel_to_ray(k, {}, {-0.1, 1.0}, 1.0, 2.0), Error);
  CHECK_THROWS_AS(pixel_to_ray(k, {}, {1.0, 1.0}, 2.0, 1.0), Error);
  CHECK_NOTHROW(pixel_to_ray(k, {}, {8.0, 8.0}, 1.0, 2.0));
}

namespace {

std::vector<RigidTransform> ring(int n) {
  std::vector<RigidTransform> poses;
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * std::numbers::pi * i / n;
    RigidTransform p;
    p.rotation = Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix();
    p.translation = Vec3(3.0 * std::cos(a), 3.0 * std::sin(a), 0.4 * std::sin(3 * a));
    poses.push_back(p);
  }
  return poses;
}

}  // namespace

TEST_CASE("pose alignment error is zero up to a similarity") {
  const std::vector<RigidTransform> truth = ring(8);
  Similarity g;
  g.scale = 2.5;
  g.rotation = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  g.offset = Vec3(-1, 4, 2);
  std::vector<RigidTransform> est;
  for (const RigidTransform& p : truth) est.push_back(g.apply(p));
  const PoseError e = pose_alignment_error(est, truth);
  CHECK(e.rotation_deg < 1e-6);
  CHECK(e.translation < 1e-9);
}

TEST_CASE("one camera rotated by 2 degrees gives 2/N mean rotation error") {
  const int n = 8;
  const std::vector<RigidTransform> truth = ring(n);
  std::vector<RigidTransform> est = truth;
  // Rotating in place leaves the centers, and so the alignment, untouched.
  est[3].rotation = est[3].rotation * Eigen::AngleAxisd(2.0 * std::numbers::pi / 180.0, Vec3::UnitX()).toRotationMatrix();
  const PoseError e = pose_alignment_error(est, truth);
  CHECK(e.rotation_deg == doctest::Approx(2.0 / n).epsilon(1e-9));
  CHECK(e.translation < 1e-9);
}

TEST_CASE("align_similarity maps one camera set onto another") {
  const std::vector<RigidTransform> from = ring(6);
  Similarity g;
  g.scale = 0.8;
  g.rotation = Eigen::AngleAxisd(-1.1, Vec3::UnitY()).toRotationMatrix();
  g.offset = Vec3(0.5, 0, -2);
  std::vector<RigidTransform> to;
  for (const RigidTransform& p : from) to.push_back(g.apply(p));
  const Similarity fit = align_similarity(from, to);
  CHECK(fit.scale == doctest::Approx(0.8).epsilon(1e-12));
  CHECK((fit.rotation - g.rotation).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((fit.offset - g.offset).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pose alignment rejects collinear cameras") {
  std::vector<RigidTransform> line(4);
  for (int i = 0; i < 4; ++i) line[static_cast<size_t>(i)].translation = Vec3(i, 0, 0);
  try {
    (void)pose_alignment_error(line, line);
    FAIL("expected a degenerate alignment");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kAlignmentDegenerate);
  }
  CHECK_THROWS_AS(pose_alignment_error(std::vector<RigidTransform>(2), std::vector<RigidTransform>(2)), Error);
}

TEST_CASE("rotation_angle_between is the geodesic angle") {
  const Mat3 a = Eigen::AngleAxisd(0.3, Vec3::UnitZ()).toRotationMatrix();
  const Mat3 b = Eigen::AngleAxisd(1.0, Vec3::UnitZ()).toRotationMatrix();
  CHECK(rotation_angle_between(a, b) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(rotation_angle_between(a, a) < 1e-7);
}
