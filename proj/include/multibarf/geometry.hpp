#pragma once

// Rigid poses, their se(3) tangent parameterization, pinhole rays and
// pose-error evaluation.
//
// Conventions used across the library:
//   * poses are camera-to-world;
//   * the camera looks along -z with +y up and +x right (image v grows down);
//   * pixel (i, j) has its center at continuous coordinate (i + 0.5, j + 0.5).

#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace mbarf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Twist {
  Vec3 omega = Vec3::Zero();  // axis-angle rotation part, radians
  Vec3 v = Vec3::Zero();      // translation part, scene units

  Twist() = default;
  Twist(const Vec3& omega_in, const Vec3& v_in) : omega(omega_in), v(v_in) {}

  Eigen::Matrix<double, 6, 1> as_vector() const;
  static Twist from_vector(const Eigen::Matrix<double, 6, 1>& x);
  bool operator==(const Twist&) const = default;
};

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  RigidTransform operator*(const RigidTransform& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }
  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const {
    Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
  // Largest deviation of R^T R from identity, and |det R - 1|.
  double orthonormality_error() const;
  bool operator==(const RigidTransform&) const = default;
};

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
  bool operator==(const Intrinsics&) const = default;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = -Vec3::UnitZ();
  double near = 0.0;
  double far = 1.0;
};

struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
};

// Continuous coordinate of the center of integer pixel (col, row).
inline PixelCoord pixel_center(int col, int row) { return {col + 0.5, row + 0.5}; }

namespace detail {

// Coefficients of the closed-form SE(3) exponential:
//   R = I + a W + b W^2,  V = I + b W + c W^2,
// written as functions of theta^2 near zero so automatic differentiation
// stays finite at the identity.
template <typename Scalar>
void exp_coefficients(const Scalar& theta_sq, Scalar& a, Scalar& b, Scalar& c) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  if (theta_sq < Scalar(1e-4)) {
    const Scalar t2 = theta_sq;
    const Scalar t4 = t2 * t2;
    const Scalar t6 = t4 * t2;
    a = Scalar(1) - t2 / Scalar(6) + t4 / Scalar(120) - t6 / Scalar(5040);
    b = Scalar(0.5) - t2 / Scalar(24) + t4 / Scalar(720) - t6 / Scalar(40320);
    c = Scalar(1.0 / 6.0) - t2 / Scalar(120) + t4 / Scalar(5040) - t6 / Scalar(362880);
    return;
  }
  const Scalar theta = sqrt(theta_sq);
  const Scalar s = sin(theta);
  const Scalar half_sin = sin(theta / Scalar(2));
  a = s / theta;
  b = Scalar(2) * half_sin * half_sin / theta_sq;
  c = (theta - s) / (theta_sq * theta);
}

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> hat(const Eigen::Matrix<Scalar, 3, 1>& w) {
  Eigen::Matrix<Scalar, 3, 3> m;
  // clang-format off
  m << Scalar(0), -w.z(),     w.y(),
       w.z(),     Scalar(0), -w.x(),
      -w.y(),     w.x(),      Scalar(0);
  // clang-format on
  return m;
}

// Generic exponential used for both values and forward-mode derivatives.
template <typename Scalar>
void se3_exp_generic(const Eigen::Matrix<Scalar, 3, 1>& omega,
                     const Eigen::Matrix<Scalar, 3, 1>& v,
                     Eigen::Matrix<Scalar, 3, 3>& rotation,
                     Eigen::Matrix<Scalar, 3, 1>& translation) {
  using M3 = Eigen::Matrix<Scalar, 3, 3>;
  const Scalar theta_sq = omega.dot(omega);
  Scalar a, b, c;
  exp_coefficients(theta_sq, a, b, c);
  const M3 w = hat(omega);
  const M3 w2 = w * w;
  const M3 eye = M3::Identity();
  rotation = eye + a * w + b * w2;
  translation = (eye + b * w + c * w2) * v;
}

}  // namespace detail

// Closed-form exponential map se(3) -> SE(3). Throws kInvalidArgument on
// non-finite input.
RigidTransform se3_exp(const Twist& t);

// Inverse of se3_exp for rotation angles below pi - 1e-6; throws
// kChartBoundary otherwise.
Twist se3_log(const RigidTransform& pose);

// The per-image camera-to-world pose used everywhere:
// initial * se3_exp(twist)^-1. Equivalently se3_exp(twist) is composed on the
// left of the world-to-camera extrinsic, so the twist lives in the camera frame.
RigidTransform apply_twist(const Twist& twist, const RigidTransform& initial);

// Jacobian of apply_twist(twist, initial) with respect to the six twist
// components (omega first, then v). Rows 0..8 are the rotation entries in
// row-major order, rows 9..11 the translation.
using PoseJacobian = Eigen::Matrix<double, 12, 6>;
PoseJacobian apply_twist_jacobian(const Twist& twist, const RigidTransform& initial);

// Back-projects a continuous pixel coordinate into a world-frame ray.
// Accepts 0 <= u <= width and 0 <= v <= height.
Ray pixel_to_ray(const Intrinsics& k, const RigidTransform& pose, PixelCoord px,
                 double near, double far);

// Unit camera-frame direction for a pixel coordinate (no bounds check).
Vec3 camera_direction(const Intrinsics& k, PixelCoord px);

struct PoseError {
  double rotation_deg = 0.0;
  double translation = 0.0;
};

// x -> scale * rotation * x + offset, applied to camera poses.
struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 offset = Vec3::Zero();

  RigidTransform apply(const RigidTransform& pose) const;
};

// Least-squares similarity taking the `from` camera centers onto the `to`
// centers. Needs at least three non-collinear cameras.
Similarity align_similarity(std::span<const RigidTransform> from,
                            std::span<const RigidTransform> to);

// Aligns the estimated camera centers to the truth with a similarity
// transform, then averages per-camera geodesic rotation error (degrees) and
// center distance. Needs at least three non-collinear cameras.
PoseError pose_alignment_error(std::span<const RigidTransform> estimated,
                               std::span<const RigidTransform> truth);

// Geodesic angle between two rotations, radians.
double rotation_angle_between(const Mat3& a, const Mat3& b);

}  // namespace mbarf
