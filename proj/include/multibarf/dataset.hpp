#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "multibarf/field.hpp"
#include "multibarf/geometry.hpp"
#include "multibarf/image.hpp"

namespace mbarf {

struct View {
  std::string name;
  Image image;  // values in [0, 1]
  Mask mask;    // empty when the whole image is usable
  RigidTransform initial_pose;
  std::optional<RigidTransform> truth_pose;
  std::optional<Image> truth_depth;  // 1 channel, `far` where nothing is hit

  bool operator==(const View&) const = default;
};

struct SensorSet {
  Intrinsics intrinsics;
  std::vector<View> views;
  Eigen::VectorXd background = Eigen::VectorXd::Zero(3);

  bool operator==(const SensorSet& o) const {
    return intrinsics == o.intrinsics && views == o.views && background == o.background;
  }
};

// Two unregistered image sets observing one static scene.
struct MultiSensorDataset {
  std::string scene_id;
  double near = 0.1;
  double far = 10.0;
  std::array<SensorSet, kSensorCount> sensors;

  const SensorSet& sensor(SensorChannel s) const { return sensors[static_cast<size_t>(index_of(s))]; }
  SensorSet& sensor(SensorChannel s) { return sensors[static_cast<size_t>(index_of(s))]; }
  int channels() const;
  // Checks shapes, pose orthonormality and near/far; throws on the first
  // offending record.
  void validate() const;
  bool operator==(const MultiSensorDataset&) const = default;
};

}  // namespace mbarf
