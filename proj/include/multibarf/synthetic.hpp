#pragma once

// Procedural two-sensor scenes with exact ray-cast ground truth.
//
// Sensor A sees a high-frequency albedo texture; sensor B sees a
// piecewise-constant emission per primitive. Both share the geometry.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "multibarf/dataset.hpp"
#include "multibarf/geometry.hpp"
#include "multibarf/image.hpp"

namespace mbarf {

enum class Shape { kSphere, kBox, kPlane };
std::string to_string(Shape s);
Shape shape_from_string(const std::string& s);

struct Primitive {
  std::string name;
  Shape shape = Shape::kSphere;
  RigidTransform pose;  // local-to-world
  // sphere: radius in x; box: half extents; plane: half extents in x and y
  // of a patch lying in local z = 0.
  Vec3 size = Vec3::Ones();
  // Sensor-A albedo: a 3D checker between two colors with a smooth shading
  // ripple; cell edge length `texture_scale` in local units.
  std::array<Vec3, 2> albedo = {Vec3::Zero(), Vec3::Ones()};
  double texture_scale = 0.2;
  Vec3 emission = Vec3::Zero();  // sensor-B value, constant over the primitive
};

struct CameraRig {
  Vec3 look_at = Vec3::Zero();
  double distance = 3.2;
  double azimuth_min_deg = -90.0;  // measured about +z, zero along +y
  double azimuth_max_deg = 90.0;
  double elevation_min_deg = 20.0;
  double elevation_max_deg = 50.0;
};

struct SceneSpec {
  std::string preset;
  std::uint64_t seed = 0;
  std::vector<Primitive> primitives;
  std::array<Vec3, kSensorCount> ambient = {Vec3::Zero(), Vec3::Zero()};
  double scene_radius = 1.5;
  CameraRig rig;

  double near() const { return rig.distance - scene_radius; }
  double far() const { return rig.distance + scene_radius; }
  bool operator==(const SceneSpec& o) const;
};

// Maps a scalar temperature in [0, 1] to a false-color triple in [0, 1].
Vec3 thermal_colormap(double t);

// Presets: "textured-shapes", "shared-boundary-subset".
SceneSpec generate_scene(const std::string& preset, std::uint64_t seed);

// Surface appearance of primitive `index` at a world point for a sensor.
Vec3 appearance(const SceneSpec& spec, size_t index, const Vec3& world_point, SensorChannel sensor);

struct Hit {
  double distance = 0.0;
  int primitive = -1;  // -1 when the ray escapes
};

Hit intersect_scene(const SceneSpec& spec, const Vec3& origin, const Vec3& direction);

// Exact per-pixel-center render: color, depth (far on miss) and the id of
// the primitive hit (-1 on miss).
struct OracleImage {
  Image image;
  Image depth;
  std::vector<int> primitive_id;
};

OracleImage oracle_render(const SceneSpec& spec, const RigidTransform& pose, const Intrinsics& k,
                          SensorChannel sensor);

struct PoseNoise {
  double rotation_deg = 0.0;
  double translation_fraction = 0.0;  // of scene_radius
};

struct DatasetOptions {
  int width = 64;
  int height = 64;
  std::array<double, kSensorCount> fov_deg = {50.0, 50.0};  // horizontal field of view
  std::array<bool, kSensorCount> logo_mask = {false, true};
};

struct SyntheticDataset {
  MultiSensorDataset data;
  SceneSpec scene;
  std::uint64_t seed = 0;
  // Injected perturbation per view: rotation angle (degrees) and center
  // offset (scene units).
  std::array<std::vector<double>, kSensorCount> injected_rotation_deg;
  std::array<std::vector<double>, kSensorCount> injected_translation;
};

Intrinsics make_intrinsics(int width, int height, double fov_deg);

// Inward-facing camera at the given spherical angles around the rig target.
RigidTransform look_at_pose(const CameraRig& rig, double azimuth_deg, double elevation_deg,
                            double distance);

SyntheticDataset make_dataset(const SceneSpec& spec, int views_a, int views_b, PoseNoise noise,
                              std::uint64_t seed, const DatasetOptions& options = {});

}  // namespace mbarf
