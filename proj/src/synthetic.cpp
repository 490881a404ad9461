#include "multibarf/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "multibarf/error.hpp"

namespace mbarf {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

RigidTransform translation_yaw(const Vec3& center, double yaw) {
  RigidTransform t;
  t.rotation = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
  t.translation = center;
  return t;
}

Primitive floor_plate(double half_extent, double temperature) {
  Primitive p;
  p.name = "floor";
  p.shape = Shape::kPlane;
  p.size = Vec3(half_extent, half_extent, 0.0);
  p.albedo = {Vec3(0.85, 0.82, 0.70), Vec3(0.25, 0.30, 0.35)};
  p.texture_scale = 0.25;
  p.emission = thermal_colormap(temperature);
  return p;
}

Vec3 random_color(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

SceneSpec textured_shapes(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  SceneSpec spec;
  spec.preset = "textured-shapes";
  spec.seed = seed;
  spec.scene_radius = 1.5;
  spec.rig.look_at = Vec3(0.0, 0.0, 0.2);
  spec.primitives.push_back(floor_plate(1.0, 0.30));
  // Floor and surroundings sit at room temperature, so sensor B cannot see
  // where the floor ends.
  spec.ambient[static_cast<size_t>(index_of(SensorChannel::kB))] = spec.primitives[0].emission;

  const int object_count = 2 + static_cast<int>(u01(rng) * 2.0);  // 2 or 3
  const double base_angle = u01(rng) * 2.0 * std::numbers::pi;
  for (int i = 0; i < object_count; ++i) {
    // Spread objects around a ring so they do not overlap.
    const double angle = base_angle + 2.0 * std::numbers::pi * i / object_count +
                         (u01(rng) - 0.5) * 0.5;
    const double ring = 0.45 + 0.15 * u01(rng);
    const Vec3 foot(ring * std::cos(angle), ring * std::sin(angle), 0.0);
    Primitive p;
    if (i % 2 == 0) {
      p.name = "box" + std::to_string(i);
      p.shape = Shape::kBox;
      p.size = Vec3(0.18 + 0.1 * u01(rng), 0.18 + 0.1 * u01(rng), 0.2 + 0.15 * u01(rng));
      p.pose = translation_yaw(foot + Vec3(0, 0, p.size.z()), u01(rng) * std::numbers::pi);
    } else {
      p.name = "sphere" + std::to_string(i);
      p.shape = Shape::kSphere;
      const double r = 0.22 + 0.1 * u01(rng);
      p.size = Vec3(r, r, r);
      p.pose = translation_yaw(foot + Vec3(0, 0, r), 0.0);
    }
    p.albedo = {random_color(rng, 0.55, 0.95), random_color(rng, 0.05, 0.4)};
    p.texture_scale = 0.12 + 0.06 * u01(rng);
    p.emission = thermal_colormap(0.55 + 0.13 * i + 0.05 * u01(rng));
    spec.primitives.push_back(p);
  }
  return spec;
}

// Two boxes with equal emission, one in front of the other with a gap, so a
// depth edge exists that sensor B cannot see.
SceneSpec shared_boundary_subset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  SceneSpec spec;
  spec.preset = "shared-boundary-subset";
  spec.seed = seed;
  spec.scene_radius = 1.5;
  spec.rig.look_at = Vec3(0.0, 0.0, 0.25);
  spec.rig.azimuth_min_deg = -50.0;
  spec.rig.azimuth_max_deg = 50.0;
  spec.rig.elevation_min_deg = 20.0;
  spec.rig.elevation_max_deg = 40.0;
  spec.primitives.push_back(floor_plate(1.0, 0.25));

  const double shared_temperature = 0.7 + 0.1 * u01(rng);
  Primitive seat;
  seat.name = "seat";
  seat.shape = Shape::kBox;
  seat.size = Vec3(0.6, 0.25, 0.15 + 0.03 * u01(rng));
  seat.pose = translation_yaw(Vec3(0.0, 0.32, seat.size.z()), 0.0);
  seat.albedo = {Vec3(0.80, 0.25, 0.15), Vec3(0.45, 0.08, 0.05)};
  seat.texture_scale = 0.15;
  seat.emission = thermal_colormap(shared_temperature);

  Primitive back;
  back.name = "backrest";
  back.shape = Shape::kBox;
  back.size = Vec3(0.6, 0.12, 0.42 + 0.05 * u01(rng));
  back.pose = translation_yaw(Vec3(0.0, -0.32, back.size.z()), 0.0);
  back.albedo = {Vec3(0.75, 0.85, 0.95), Vec3(0.35, 0.55, 0.85)};
  back.texture_scale = 0.15;
  back.emission = thermal_colormap(shared_temperature);

  spec.primitives.push_back(seat);
  spec.primitives.push_back(back);
  return spec;
}

// Ray against an axis-aligned box centered at the origin (slab test).
double intersect_box(const Vec3& o, const Vec3& d, const Vec3& half) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d(i)) < 1e-300) {
      if (std::abs(o(i)) > half(i)) return -1.0;
      continue;
    }
    double a = (-half(i) - o(i)) / d(i);
    double b = (half(i) - o(i)) / d(i);
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  if (t0 > t1 || t1 <= 0.0) return -1.0;
  return t0 > 0.0 ? t0 : -1.0;
}

double intersect_sphere(const Vec3& o, const Vec3& d, double radius) {
  const double b = o.dot(d);
  const double c = o.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc < 0.0) return -1.0;
  const double s = std::sqrt(disc);
  const double t = -b - s;
  return t > 0.0 ? t : -1.0;
}

double intersect_plane(const Vec3& o, const Vec3& d, const Vec3& half) {
  if (std::abs(d.z()) < 1e-300) return -1.0;
  const double t = -o.z() / d.z();
  if (t <= 0.0) return -1.0;
  const Vec3 p = o + t * d;
  if (std::abs(p.x()) > half.x() || std::abs(p.y()) > half.y()) return -1.0;
  return t;
}

bool contains(const Primitive& p, const Vec3& world) {
  const Vec3 local = p.pose.inverse() * world;
  switch (p.shape) {
    case Shape::kSphere: return local.norm() < p.size.x();
    case Shape::kBox: return (local.cwiseAbs() - p.size).maxCoeff() < 0.0;
    case Shape::kPlane: return false;
  }
  return false;
}

RigidTransform random_rotation_about_random_axis(std::mt19937_64& rng, double angle) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Vec3 axis(n01(rng), n01(rng), n01(rng));
  axis.normalize();
  RigidTransform t;
  t.rotation = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  return t;
}

}  // namespace

std::string to_string(Shape s) {
  switch (s) {
    case Shape::kSphere: return "sphere";
    case Shape::kBox: return "box";
    case Shape::kPlane: return "plane";
  }
  return "unknown";
}

Shape shape_from_string(const std::string& s) {
  if (s == "sphere") return Shape::kSphere;
  if (s == "box") return Shape::kBox;
  if (s == "plane") return Shape::kPlane;
  fail(ErrorKind::kFormat, "unknown primitive shape '" + s + "'");
}

bool SceneSpec::operator==(const SceneSpec& o) const {
  if (preset != o.preset || seed != o.seed || scene_radius != o.scene_radius ||
      ambient != o.ambient || primitives.size() != o.primitives.size())
    return false;
  if (rig.look_at != o.rig.look_at || rig.distance != o.rig.distance ||
      rig.azimuth_min_deg != o.rig.azimuth_min_deg || rig.azimuth_max_deg != o.rig.azimuth_max_deg ||
      rig.elevation_min_deg != o.rig.elevation_min_deg ||
      rig.elevation_max_deg != o.rig.elevation_max_deg)
    return false;
  for (size_t i = 0; i < primitives.size(); ++i) {
    const Primitive& a = primitives[i];
    const Primitive& b = o.primitives[i];
    if (a.name != b.name || a.shape != b.shape || !(a.pose == b.pose) || a.size != b.size ||
        a.albedo != b.albedo || a.texture_scale != b.texture_scale || a.emission != b.emission)
      return false;
  }
  return true;
}

Vec3 thermal_colormap(double t) {
  t = clamp01(t);
  return {clamp01(1.6 * t), clamp01(1.8 * t - 0.75), clamp01(0.9 * std::sin(t * std::numbers::pi * 1.6))};
}

SceneSpec generate_scene(const std::string& preset, std::uint64_t seed) {
  if (preset == "textured-shapes") return textured_shapes(seed);
  if (preset == "shared-boundary-subset") return shared_boundary_subset(seed);
  fail(ErrorKind::kUnknownPreset, "unknown scene preset '" + preset + "'");
}

Vec3 appearance(const SceneSpec& spec, size_t index, const Vec3& world_point,
                SensorChannel sensor) {
  const Primitive& p = spec.primitives.at(index);
  if (sensor == SensorChannel::kB) return p.emission;
  // Offset keeps faces at multiples of the cell size away from checker seams.
  const Vec3 local = p.pose.inverse() * world_point / p.texture_scale + Vec3(0.31, 0.17, 0.43);
  const long parity = static_cast<long>(std::floor(local.x())) +
                      static_cast<long>(std::floor(local.y())) +
                      static_cast<long>(std::floor(local.z()));
  const Vec3& base = p.albedo[static_cast<size_t>(parity & 1)];
  const double ripple = 0.85 + 0.15 * std::sin(2.1 * local.x() + 1.3 * local.y() + 0.7 * local.z());
  return (base * ripple).cwiseMax(0.0).cwiseMin(1.0);
}

Hit intersect_scene(const SceneSpec& spec, const Vec3& origin, const Vec3& direction) {
  Hit best;
  best.distance = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < spec.primitives.size(); ++i) {
    const Primitive& p = spec.primitives[i];
    const RigidTransform inv = p.pose.inverse();
    const Vec3 o = inv * origin;
    const Vec3 d = inv.rotation * direction;
    double t = -1.0;
    switch (p.shape) {
      case Shape::kSphere: t = intersect_sphere(o, d, p.size.x()); break;
      case Shape::kBox: t = intersect_box(o, d, p.size); break;
      case Shape::kPlane: t = intersect_plane(o, d, p.size); break;
    }
    if (t > 0.0 && t < best.distance) {
      best.distance = t;
      best.primitive = static_cast<int>(i);
    }
  }
  return best;
}

OracleImage oracle_render(const SceneSpec& spec, const RigidTransform& pose, const Intrinsics& k,
                          SensorChannel sensor) {
  k.validate();
  for (const Primitive& p : spec.primitives) {
    if (contains(p, pose.translation))
      fail(ErrorKind::kCameraInside, "oracle_render: camera inside primitive '" + p.name + "'");
  }
  const double far = spec.far();
  OracleImage out{Image(k.width, k.height, 3), Image(k.width, k.height, 1, far),
                  std::vector<int>(static_cast<size_t>(k.width * k.height), -1)};
  const Vec3& ambient = spec.ambient[static_cast<size_t>(index_of(sensor))];
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Vec3 dir = pose.rotation * camera_direction(k, pixel_center(x, y));
      const Hit hit = intersect_scene(spec, pose.translation, dir);
      Vec3 color = ambient;
      if (hit.primitive >= 0 && hit.distance <= far) {
        color = appearance(spec, static_cast<size_t>(hit.primitive),
                           pose.translation + hit.distance * dir, sensor);
        out.depth.at(x, y) = hit.distance;
        out.primitive_id[static_cast<size_t>(y * k.width + x)] = hit.primitive;
      }
      for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = color(c);
    }
  }
  return out;
}

Intrinsics make_intrinsics(int width, int height, double fov_deg) {
  Intrinsics k;
  k.width = width;
  k.height = height;
  k.fx = 0.5 * width / std::tan(0.5 * fov_deg * kDeg);
  k.fy = k.fx;
  k.cx = 0.5 * width;
  k.cy = 0.5 * height;
  k.validate();
  return k;
}

RigidTransform look_at_pose(const CameraRig& rig, double azimuth_deg, double elevation_deg,
                            double distance) {
  const double az = azimuth_deg * kDeg;
  const double el = elevation_deg * kDeg;
  const Vec3 offset(-std::sin(az) * std::cos(el), std::cos(az) * std::cos(el), std::sin(el));
  const Vec3 center = rig.look_at + distance * offset;
  const Vec3 forward = (rig.look_at - center).normalized();
  const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
  const Vec3 up = right.cross(forward);
  RigidTransform pose;
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = up;
  pose.rotation.col(2) = -forward;
  pose.translation = center;
  return pose;
}

SyntheticDataset make_dataset(const SceneSpec& spec, int views_a, int views_b, PoseNoise noise,
                              std::uint64_t seed, const DatasetOptions& options) {
  require(views_a >= 2 && views_b >= 2, "make_dataset: need at least 2 views per sensor");
  require(noise.rotation_deg >= 0.0 && noise.translation_fraction >= 0.0,
          "make_dataset: pose noise must be non-negative");
  SyntheticDataset out;
  out.scene = spec;
  out.seed = seed;
  out.data.scene_id = spec.preset + "-" + std::to_string(spec.seed);
  out.data.near = spec.near();
  out.data.far = spec.far();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  // Half-normal magnitudes scaled so their mean equals the configured noise.
  const double half_normal_scale = std::sqrt(std::numbers::pi / 2.0);

  const std::array<int, kSensorCount> counts = {views_a, views_b};
  for (SensorChannel s : kSensors) {
    const auto si = static_cast<size_t>(index_of(s));
    SensorSet& set = out.data.sensors[si];
    set.intrinsics = make_intrinsics(options.width, options.height, options.fov_deg[si]);
    set.background = spec.ambient[si];
    const int n = counts[si];
    const CameraRig& rig = spec.rig;
    for (int i = 0; i < n; ++i) {
      // Stratified azimuths; each sensor draws its own jitter, so the two
      // view sets share no poses.
      const double az = rig.azimuth_min_deg +
                        (rig.azimuth_max_deg - rig.azimuth_min_deg) * (i + u01(rng)) / n;
      const double el = rig.elevation_min_deg +
                        (rig.elevation_max_deg - rig.elevation_min_deg) * u01(rng);
      const double dist = rig.distance * (0.95 + 0.1 * u01(rng));
      View v;
      v.name = to_string(s) + "_" + std::to_string(i);
      const RigidTransform truth = look_at_pose(rig, az, el, dist);
      v.truth_pose = truth;

      const double angle_deg = std::abs(n01(rng)) * noise.rotation_deg * half_normal_scale;
      const double shift = std::abs(n01(rng)) * noise.translation_fraction * spec.scene_radius *
                           half_normal_scale;
      const RigidTransform spin = random_rotation_about_random_axis(rng, angle_deg * kDeg);
      Vec3 shift_dir(n01(rng), n01(rng), n01(rng));
      shift_dir.normalize();
      v.initial_pose = truth;
      if (angle_deg > 0.0) v.initial_pose.rotation = truth.rotation * spin.rotation;
      if (shift > 0.0) v.initial_pose.translation = truth.translation + shift * shift_dir;
      out.injected_rotation_deg[si].push_back(angle_deg);
      out.injected_translation[si].push_back(shift);

      OracleImage oracle = oracle_render(spec, truth, set.intrinsics, s);
      v.image = std::move(oracle.image);
      v.truth_depth = std::move(oracle.depth);
      if (options.logo_mask[si]) {
        v.mask = Mask(options.width, options.height);
        const int mw = std::max(1, options.width / 6);
        const int mh = std::max(1, options.height / 12);
        for (int y = options.height - 1 - mh; y < options.height - 1; ++y)
          for (int x = options.width - 1 - mw; x < options.width - 1; ++x) v.mask.set(x, y, true);
      }
      set.views.push_back(std::move(v));
    }
  }
  return out;
}

}  // namespace mbarf
