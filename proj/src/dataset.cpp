#include "multibarf/dataset.hpp"

#include "multibarf/error.hpp"

namespace mbarf {

int MultiSensorDataset::channels() const {
  for (const SensorSet& s : sensors)
    if (!s.views.empty()) return s.views.front().image.channels;
  return 3;
}

void MultiSensorDataset::validate() const {
  require(near > 0.0 && far > near, "dataset: need 0 < near < far");
  for (SensorChannel s : kSensors) {
    const SensorSet& set = sensor(s);
    set.intrinsics.validate();
    for (const View& v : set.views) {
      const std::string where = "dataset: sensor " + to_string(s) + " view '" + v.name + "': ";
      require(v.image.width == set.intrinsics.width && v.image.height == set.intrinsics.height,
              where + "image size does not match intrinsics");
      require(v.image.channels == set.background.size(), where + "channel count mismatch");
      require(v.mask.empty() || (v.mask.width == v.image.width && v.mask.height == v.image.height),
              where + "mask size mismatch");
      if (v.initial_pose.orthonormality_error() > 1e-6)
        fail(ErrorKind::kFormat, where + "initial pose rotation is not orthonormal");
      if (v.truth_pose && v.truth_pose->orthonormality_error() > 1e-6)
        fail(ErrorKind::kFormat, where + "truth pose rotation is not orthonormal");
      if (v.truth_depth)
        require(v.truth_depth->width == v.image.width && v.truth_depth->height == v.image.height &&
                    v.truth_depth->channels == 1,
                where + "truth depth shape mismatch");
    }
  }
}

}  // namespace mbarf
