#include "multibarf/geometry.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/SVD>
#include <unsupported/Eigen/AutoDiff>

#include "multibarf/error.hpp"

namespace mbarf {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kChartBoundary: return "chart-boundary";
    case ErrorKind::kAlignmentDegenerate: return "alignment-degenerate";
    case ErrorKind::kEmptyDomain: return "empty-domain";
    case ErrorKind::kDiverged: return "diverged";
    case ErrorKind::kCameraInside: return "camera-inside-primitive";
    case ErrorKind::kUnknownPreset: return "unknown-preset";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kVersionMismatch: return "version-mismatch";
  }
  return "unknown";
}

Eigen::Matrix<double, 6, 1> Twist::as_vector() const {
  Eigen::Matrix<double, 6, 1> x;
  x << omega, v;
  return x;
}

Twist Twist::from_vector(const Eigen::Matrix<double, 6, 1>& x) {
  return {x.head<3>(), x.tail<3>()};
}

double RigidTransform::orthonormality_error() const {
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  return std::max(ortho, std::abs(rotation.determinant() - 1.0));
}

void Intrinsics::validate() const {
  require(std::isfinite(fx) && std::isfinite(fy) && fx > 0.0 && fy > 0.0,
          "intrinsics: focal lengths must be positive");
  require(width > 0 && height > 0, "intrinsics: image size must be positive");
  require(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height,
          "intrinsics: principal point outside the image");
}

RigidTransform se3_exp(const Twist& t) {
  require(t.omega.allFinite() && t.v.allFinite(), "se3_exp: non-finite twist");
  RigidTransform out;
  detail::se3_exp_generic<double>(t.omega, t.v, out.rotation, out.translation);
  return out;
}

Twist se3_log(const RigidTransform& pose) {
  require(pose.rotation.allFinite() && pose.translation.allFinite(),
          "se3_log: non-finite transform");
  const Mat3& r = pose.rotation;
  const double cos_theta = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  if (theta >= std::numbers::pi - 1e-6) {
    fail(ErrorKind::kChartBoundary,
         "se3_log: rotation angle " + std::to_string(theta) + " at the chart boundary");
  }
  const Vec3 vee(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  // omega = theta / (2 sin theta) * vee
  double scale;
  if (theta < 1e-4) {
    const double t2 = theta * theta;
    scale = 0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0;
  } else {
    scale = theta / (2.0 * std::sin(theta));
  }
  Twist out;
  out.omega = scale * vee;
  double a, b, c;
  detail::exp_coefficients(out.omega.squaredNorm(), a, b, c);
  const Mat3 w = detail::hat<double>(out.omega);
  const Mat3 v_mat = Mat3::Identity() + b * w + c * w * w;
  out.v = v_mat.partialPivLu().solve(pose.translation);
  return out;
}

RigidTransform apply_twist(const Twist& twist, const RigidTransform& initial) {
  return initial * se3_exp(twist).inverse();
}

PoseJacobian apply_twist_jacobian(const Twist& twist, const RigidTransform& initial) {
  using Deriv = Eigen::Matrix<double, 6, 1>;
  using AD = Eigen::AutoDiffScalar<Deriv>;
  Eigen::Matrix<AD, 3, 1> omega, v;
  for (int i = 0; i < 3; ++i) {
    omega(i) = AD(twist.omega(i), 6, i);
    v(i) = AD(twist.v(i), 6, 3 + i);
  }
  Eigen::Matrix<AD, 3, 3> rot;
  Eigen::Matrix<AD, 3, 1> trans;
  detail::se3_exp_generic<AD>(omega, v, rot, trans);
  const Eigen::Matrix<AD, 3, 3> rot_t = rot.transpose();
  const Eigen::Matrix<AD, 3, 3> r_out = initial.rotation.cast<AD>() * rot_t;
  const Eigen::Matrix<AD, 3, 1> t_out =
      initial.translation.cast<AD>() - initial.rotation.cast<AD>() * (rot_t * trans);

  PoseJacobian jac = PoseJacobian::Zero();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      const Deriv& d = r_out(r, c).derivatives();
      if (d.size() == 6) jac.row(3 * r + c) = d.transpose();
    }
    const Deriv& d = t_out(r).derivatives();
    if (d.size() == 6) jac.row(9 + r) = d.transpose();
  }
  return jac;
}

Vec3 camera_direction(const Intrinsics& k, PixelCoord px) {
  const Vec3 d((px.u - k.cx) / k.fx, -(px.v - k.cy) / k.fy, -1.0);
  return d.normalized();
}

Ray pixel_to_ray(const Intrinsics& k, const RigidTransform& pose, PixelCoord px,
                 double near, double far) {
  require(std::isfinite(px.u) && std::isfinite(px.v) && px.u >= 0.0 && px.v >= 0.0 &&
              px.u <= k.width && px.v <= k.height,
          "pixel_to_ray: pixel (" + std::to_string(px.u) + ", " + std::to_string(px.v) +
              ") outside the image");
  require(near > 0.0 && far > near, "pixel_to_ray: need 0 < near < far");
  Ray ray;
  ray.origin = pose.translation;
  ray.direction = pose.rotation * camera_direction(k, px);
  ray.direction.normalize();
  ray.near = near;
  ray.far = far;
  return ray;
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const Mat3 rel = a.transpose() * b;
  // acos loses precision near zero; the sine from the skew part does not.
  const Vec3 vee(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  const double sin_part = 0.5 * vee.norm();
  const double cos_part = 0.5 * (rel.trace() - 1.0);
  return std::atan2(sin_part, cos_part);
}

RigidTransform Similarity::apply(const RigidTransform& pose) const {
  RigidTransform out;
  out.rotation = rotation * pose.rotation;
  out.translation = scale * (rotation * pose.translation) + offset;
  return out;
}

Similarity align_similarity(std::span<const RigidTransform> from,
                            std::span<const RigidTransform> to) {
  require(from.size() == to.size(), "align_similarity: length mismatch");
  require(from.size() >= 3, "align_similarity: need at least 3 poses");
  const auto n = static_cast<Eigen::Index>(from.size());
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = from[i].translation;
    dst.col(i) = to[i].translation;
  }
  for (const Eigen::Matrix3Xd* pts : {&src, &dst}) {
    const Eigen::Matrix3Xd centered = pts->colwise() - pts->rowwise().mean();
    Eigen::JacobiSVD<Eigen::Matrix3Xd> svd(centered);
    const auto& sv = svd.singularValues();
    if (!(sv(0) > 0.0) || sv(1) <= 1e-9 * sv(0)) {
      fail(ErrorKind::kAlignmentDegenerate,
           "align_similarity: camera centers are collinear or coincident");
    }
  }
  const Eigen::Matrix4d sim = Eigen::umeyama(src, dst, true);
  const Mat3 sr = sim.topLeftCorner<3, 3>();
  Similarity out;
  out.scale = std::cbrt(sr.determinant());
  out.rotation = sr / out.scale;
  out.offset = sim.topRightCorner<3, 1>();
  return out;
}

PoseError pose_alignment_error(std::span<const RigidTransform> estimated,
                               std::span<const RigidTransform> truth) {
  require(estimated.size() == truth.size(), "pose_alignment_error: length mismatch");
  const Similarity sim = align_similarity(estimated, truth);
  const auto n = static_cast<Eigen::Index>(estimated.size());
  PoseError err;
  for (Eigen::Index i = 0; i < n; ++i) {
    const RigidTransform aligned = sim.apply(estimated[i]);
    err.rotation_deg += rotation_angle_between(aligned.rotation, truth[i].rotation) * 180.0 /
                        std::numbers::pi;
    err.translation += (aligned.translation - truth[i].translation).norm();
  }
  err.rotation_deg /= static_cast<double>(n);
  err.translation /= static_cast<double>(n);
  return err;
}

}  // namespace mbarf
