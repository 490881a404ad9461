#pragma once

// Joint optimization of the branched field and every training image's pose.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "multibarf/dataset.hpp"
#include "multibarf/encoding.hpp"
#include "multibarf/field.hpp"
#include "multibarf/geometry.hpp"
#include "multibarf/renderer.hpp"

namespace mbarf {

enum class Schedule {
  kAlternating,       // A, B, A, B, ...
  kSequential,        // all-A phase, then all-B phase
  kSequentialFrozen,  // as sequential, trunk/density/head A frozen in phase two
  kSingleA,           // single-sensor baseline on A
  kSingleB,           // single-sensor baseline on B
};
std::string to_string(Schedule s);
Schedule schedule_from_string(const std::string& name);

struct TrainConfig {
  long iterations = 10000;
  int batch_pixels = 4096;
  double lr_field_start = 1e-3;
  double lr_field_end = 1e-4;
  double lr_pose_start = 3e-3;
  double lr_pose_end = 1e-5;
  double alpha_ramp_start = 0.2;  // fractions of the phase length
  double alpha_ramp_end = 0.7;
  Schedule schedule = Schedule::kAlternating;
  double validation_fraction = 0.13;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  long log_interval = 100;
  long validation_interval = 1000;  // 0 disables validation in logs
  long checkpoint_interval = 0;     // 0 disables periodic checkpoints

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Everything needed to rebuild a run.
struct RunConfig {
  TrainConfig train;
  FieldConfig field;
  EncodingConfig encoding;
  SamplingConfig sampling;

  // Desk-scale defaults sized for a single CPU core.
  static RunConfig desk();
  // Syncs field input sizes with the encoding and checks everything.
  void finalize();
};

// Iterations a schedule runs in total (sequential modes run two phases).
long total_iterations(const TrainConfig& cfg);

struct DatasetSplit {
  std::vector<int> train;
  std::vector<int> validation;
};

// floor(fraction * count) validation items chosen by a seeded shuffle.
DatasetSplit split_dataset(size_t count, double fraction, std::uint64_t seed);

struct StepPlan {
  SensorChannel sensor = SensorChannel::kA;
  TrainableSet frozen;  // override applied on top of the sensor's groups
  long phase_iteration = 0;
  long phase_length = 1;
};

StepPlan mode_for_iteration(const TrainConfig& cfg, long iteration);

double lr_at(long iteration, long total, double start, double end);
double alpha_at(long iteration, long total, double ramp_start, double ramp_end, int bands);

struct PixelEntry {
  int view = 0;  // index into the sensor's view list
  int slot = 0;  // index into the sensor's training views / twists
  int x = 0;
  int y = 0;
  Eigen::VectorXd target;
};

struct PixelBatch {
  SensorChannel sensor = SensorChannel::kA;
  std::vector<PixelEntry> entries;
};

// All unmasked pixels of a sensor's training views.
class PixelPool {
 public:
  PixelPool() = default;
  PixelPool(const MultiSensorDataset& data, SensorChannel sensor, const std::vector<int>& views);

  size_t size() const { return pixels_.size(); }
  PixelBatch sample(const MultiSensorDataset& data, int batch_pixels, std::mt19937_64& rng) const;

 private:
  struct Ref {
    int slot;
    int x;
    int y;
  };
  SensorChannel sensor_ = SensorChannel::kA;
  std::vector<int> views_;
  std::vector<Ref> pixels_;
};

// Uniform with replacement over every unmasked training pixel of `sensor`.
PixelBatch sample_batch(const MultiSensorDataset& data, SensorChannel sensor,
                        const std::vector<int>& train_views, int batch_pixels,
                        std::mt19937_64& rng);

// Mean squared error over entries and channels (C x R matrices).
double photometric_loss(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& target);

struct AdamSlot {
  std::vector<double> m;
  std::vector<double> v;
  long steps = 0;
  bool operator==(const AdamSlot&) const = default;
};

struct PoseSlot {
  Twist twist;
  AdamSlot adam{std::vector<double>(6, 0.0), std::vector<double>(6, 0.0), 0};
  bool operator==(const PoseSlot&) const = default;
};

struct CameraInfo {
  std::array<Intrinsics, kSensorCount> intrinsics;
  double near = 0.1;
  double far = 10.0;
  bool operator==(const CameraInfo&) const = default;
};

struct TrainState {
  RunConfig config;
  FieldParams params;
  std::vector<AdamSlot> field_adam;  // one per tensor of params.layout
  std::array<std::vector<int>, kSensorCount> train_views;
  std::array<std::vector<int>, kSensorCount> validation_views;
  std::array<std::vector<PoseSlot>, kSensorCount> poses;  // parallel to train_views
  long iteration = 0;
  std::mt19937_64 rng;
  CameraInfo cameras;

  // Alpha after the last completed step (the phase's final value at a
  // sequential phase boundary).
  double current_alpha() const;
  // Optimized camera-to-world pose of training slot `slot`.
  RigidTransform pose(const MultiSensorDataset& data, SensorChannel s, int slot) const;
};

TrainState init_train_state(const MultiSensorDataset& data, RunConfig config);

struct LogRecord {
  long iteration = 0;
  SensorChannel mode = SensorChannel::kA;
  double loss = 0.0;
  double lr_field = 0.0;
  double lr_pose = 0.0;
  double alpha = 0.0;
  std::array<std::optional<double>, kSensorCount> validation_psnr;
};

std::string to_json_line(const LogRecord& r);

struct StepResult {
  double loss = 0.0;
  StepPlan plan;
  double lr_field = 0.0;
  double lr_pose = 0.0;
  double alpha = 0.0;
};

// Owns the per-sensor pixel pools and scratch buffers for repeated steps.
class Trainer {
 public:
  Trainer(const MultiSensorDataset& data, TrainState& state);

  StepResult step();
  // Loss and gradients of one batch without updating anything. Exposed for
  // gradient checks.
  struct Gradients {
    double loss = 0.0;
    std::vector<double> field;
    std::vector<Eigen::Matrix<double, 6, 1>> twists;  // per slot of the batch sensor
  };
  Gradients compute_gradients(const PixelBatch& batch, double alpha, std::uint64_t sampling_seed) const;

  const PixelPool& pool(SensorChannel s) const { return pools_[static_cast<size_t>(index_of(s))]; }

 private:
  const MultiSensorDataset& data_;
  TrainState& state_;
  std::array<PixelPool, kSensorCount> pools_;
};

StepResult train_step(TrainState& state, const MultiSensorDataset& data);

struct TrainHooks {
  std::function<void(const LogRecord&)> on_log;
  std::function<void(const TrainState&)> on_checkpoint;
};

// Runs steps until state.iteration reaches `until` (clamped to the schedule
// length). On divergence the last good state is handed to on_checkpoint
// before the error propagates.
void train_until(TrainState& state, const MultiSensorDataset& data, long until,
                 const TrainHooks& hooks = {});

TrainState train(const MultiSensorDataset& data, const RunConfig& config,
                 const TrainHooks& hooks = {});

struct RefineOptions {
  int iterations = 200;
  int batch_pixels = 512;
  double lr_start = 3e-3;
  double lr_end = 1e-4;
  std::uint64_t seed = 0;
};

// Test-time pose refinement: with the field frozen, optimizes a twist applied
// to `initial` so the rendering of `sensor` matches the view's image.
Twist refine_pose(const TrainState& state, const View& view, const Intrinsics& k,
                  SensorChannel sensor, const RigidTransform& initial, double near, double far,
                  const RefineOptions& options);

// Adam update of `values` in place.
void adam_update(std::span<double> values, std::span<const double> grads, AdamSlot& slot,
                 double lr, const TrainConfig& cfg);

}  // namespace mbarf
