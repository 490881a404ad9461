#pragma once

// The branched radiance-field network: a shared ReLU trunk, one shared
// density head and one color head per sensor channel.
//
// All weights live in one flat buffer described by a tensor manifest, which
// keeps Adam state, gradients and checkpoints trivially aligned with the
// parameters.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "multibarf/encoding.hpp"

namespace mbarf {

enum class SensorChannel : int { kA = 0, kB = 1 };

inline constexpr int kSensorCount = 2;
inline constexpr std::array<SensorChannel, kSensorCount> kSensors = {SensorChannel::kA,
                                                                     SensorChannel::kB};

inline int index_of(SensorChannel s) { return static_cast<int>(s); }
inline SensorChannel other(SensorChannel s) {
  return s == SensorChannel::kA ? SensorChannel::kB : SensorChannel::kA;
}
std::string to_string(SensorChannel s);
SensorChannel sensor_from_string(const std::string& name);

enum class ParamGroup : int { kTrunk = 0, kDensityHead = 1, kColorHeadA = 2, kColorHeadB = 3 };
inline constexpr int kParamGroupCount = 4;
std::string to_string(ParamGroup g);

inline ParamGroup color_head_group(SensorChannel s) {
  return s == SensorChannel::kA ? ParamGroup::kColorHeadA : ParamGroup::kColorHeadB;
}

struct FieldConfig {
  int trunk_layers = 8;
  int trunk_width = 256;
  int skip_layer = 4;  // layer whose input re-concatenates the encoded position; <=0 disables
  int head_layers = 2;  // linear layers per color head, the last one producing the color
  int head_width = 128;
  int channels_per_sensor = 3;
  int position_dim = 63;  // encoded input sizes, see EncodingConfig
  int direction_dim = 27;

  void validate() const;
  // Copies `base` with the encoded input sizes taken from `enc`.
  static FieldConfig for_encoding(const EncodingConfig& enc, FieldConfig base);
  static FieldConfig for_encoding(const EncodingConfig& enc);
  bool has_skip() const { return skip_layer > 0 && skip_layer < trunk_layers; }
  bool operator==(const FieldConfig&) const = default;
};

struct TensorInfo {
  std::string name;
  ParamGroup group = ParamGroup::kTrunk;
  int rows = 0;
  int cols = 0;
  size_t offset = 0;

  size_t size() const { return static_cast<size_t>(rows) * static_cast<size_t>(cols); }
  bool operator==(const TensorInfo&) const = default;
};

// Indices into the tensor manifest for one dense layer.
struct LayerRef {
  size_t weight = 0;
  size_t bias = 0;
};

struct FieldLayout {
  std::vector<TensorInfo> tensors;
  std::vector<LayerRef> trunk;
  LayerRef density;
  std::array<std::vector<LayerRef>, kSensorCount> heads;
  size_t total_size = 0;

  static FieldLayout build(const FieldConfig& cfg);
};

struct FieldParams {
  FieldConfig config;
  FieldLayout layout;
  std::vector<double> values;

  Eigen::Map<const Eigen::MatrixXd> tensor(size_t index) const;
  Eigen::Map<Eigen::MatrixXd> tensor(size_t index);
  std::span<const double> group_span(size_t index) const;
  bool operator==(const FieldParams& rhs) const {
    return config == rhs.config && values == rhs.values;
  }
};

struct FieldOutput {
  double sigma = 0.0;
  Eigen::VectorXd color;
};

// Which parameter groups an update may touch.
struct TrainableSet {
  std::array<bool, kParamGroupCount> groups{};

  bool contains(ParamGroup g) const { return groups[static_cast<size_t>(g)]; }
  bool empty() const;
  std::vector<size_t> tensor_indices(const FieldLayout& layout) const;
  bool operator==(const TrainableSet&) const = default;
};

TrainableSet make_trainable_set(std::initializer_list<ParamGroup> groups);

FieldParams init_params(const FieldConfig& cfg, std::uint64_t seed);

// Groups updated when training on `mode` images: trunk, density head and
// that sensor's color head, minus anything listed in `frozen`.
TrainableSet select_trainable(const FieldParams& p, SensorChannel mode,
                              const TrainableSet& frozen = {});

// Activations kept by forward_batch for the reverse pass.
struct FieldCache {
  Eigen::MatrixXd enc_pos;
  Eigen::MatrixXd enc_dir;
  std::vector<Eigen::MatrixXd> trunk_out;  // post-ReLU output of each trunk layer
  Eigen::MatrixXd density_pre;             // 1 x P, before softplus
  std::array<bool, kSensorCount> head_done{};
  std::array<std::vector<Eigen::MatrixXd>, kSensorCount> head_out;  // per layer, post-activation
};

struct FieldBatchOutput {
  Eigen::RowVectorXd sigma;
  std::array<Eigen::MatrixXd, kSensorCount> color;  // C x P, filled for requested heads
};

// Evaluates P points at once (one per column). `heads` picks which color
// heads to run; density is computed once regardless.
FieldBatchOutput forward_batch(const FieldParams& p, const Eigen::MatrixXd& enc_pos,
                               const Eigen::MatrixXd& enc_dir,
                               std::array<bool, kSensorCount> heads, FieldCache& cache);

// Reverse pass for one sensor's color head plus the shared density.
// Accumulates parameter gradients into `grads` (same layout as p.values)
// when it is non-empty; the other sensor's head is never touched. Writes
// input gradients when the pointers are non-null.
void backward_batch(const FieldParams& p, const FieldCache& cache, SensorChannel sensor,
                    const Eigen::RowVectorXd& d_sigma, const Eigen::MatrixXd& d_color,
                    std::span<double> grads, Eigen::MatrixXd* d_enc_pos,
                    Eigen::MatrixXd* d_enc_dir);

FieldOutput query_field(const FieldParams& p, const Eigen::VectorXd& enc_pos,
                        const Eigen::VectorXd& enc_dir, SensorChannel sensor);

struct FieldGradient {
  std::vector<double> params;
  Eigen::VectorXd enc_pos;
  Eigen::VectorXd enc_dir;
};

FieldGradient query_field_backward(const FieldParams& p, const Eigen::VectorXd& enc_pos,
                                   const Eigen::VectorXd& enc_dir, SensorChannel sensor,
                                   double d_sigma, const Eigen::VectorXd& d_color);

}  // namespace mbarf
