#pragma once

// Differentiable volume rendering over the branched field.

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "multibarf/encoding.hpp"
#include "multibarf/field.hpp"
#include "multibarf/geometry.hpp"
#include "multibarf/image.hpp"

namespace mbarf {

// Counter-based random stream (splitmix64). Each (seed, stream) pair yields an
// independent, reproducible sequence, so per-pixel randomness does not depend
// on traversal order or batching.
class StreamRng {
 public:
  StreamRng(std::uint64_t seed, std::uint64_t stream);
  std::uint64_t next();
  double uniform();  // [0, 1)

 private:
  std::uint64_t state_;
};

std::uint64_t mix64(std::uint64_t x);

struct SamplingConfig {
  int samples_per_ray = 128;
  bool stratified = true;
  std::array<Eigen::VectorXd, kSensorCount> background = {Eigen::VectorXd::Zero(3),
                                                          Eigen::VectorXd::Zero(3)};
  std::uint64_t seed = 0;  // base seed for per-pixel streams in render_image

  void validate(int channels) const;
};

struct RenderResult {
  Eigen::VectorXd color;
  double depth = 0.0;
  double opacity = 0.0;
};

// N increasing depths in [near, far]: bin midpoints, or one uniform draw per
// bin when stratified.
Eigen::VectorXd sample_depths(const Ray& ray, const SamplingConfig& cfg, StreamRng& rng);

// Quadrature compositing. `colors` holds one sample per column (C x N).
RenderResult composite(const Eigen::VectorXd& sigmas, const Eigen::MatrixXd& colors,
                       const Eigen::VectorXd& depths, double far,
                       const Eigen::VectorXd& background);

struct CompositeGradient {
  Eigen::VectorXd sigmas;
  Eigen::MatrixXd colors;
  Eigen::VectorXd depths;
};

CompositeGradient composite_backward(const Eigen::VectorXd& sigmas, const Eigen::MatrixXd& colors,
                                     const Eigen::VectorXd& depths, double far,
                                     const Eigen::VectorXd& background,
                                     const Eigen::VectorXd& d_color, double d_depth,
                                     double d_opacity);

// A set of rays rendered together. All rays share near/far.
struct RayBatch {
  Eigen::Matrix3Xd origins;
  Eigen::Matrix3Xd directions;
  std::vector<std::uint64_t> streams;  // rng stream id per ray
  double near = 0.0;
  double far = 1.0;

  Eigen::Index size() const { return origins.cols(); }
};

struct BatchRenderOutput {
  std::array<Eigen::MatrixXd, kSensorCount> color;  // C x R for each requested sensor
  Eigen::RowVectorXd depth;
  Eigen::RowVectorXd opacity;
};

struct BatchRenderCache {
  FieldCache field;
  Eigen::MatrixXd depths;      // N x R
  Eigen::MatrixXd points;      // 3 x (R*N), ray r occupies columns [r*N, (r+1)*N)
  Eigen::Matrix3Xd directions;  // 3 x R
  Eigen::RowVectorXd sigma;    // 1 x (R*N)
  std::array<Eigen::MatrixXd, kSensorCount> color;  // C x (R*N)
  double alpha = 0.0;
  double far = 1.0;
};

struct RenderContext {
  const FieldParams& params;
  const EncodingConfig& encoding;
  const SamplingConfig& sampling;
  double alpha = 0.0;
};

BatchRenderOutput render_batch(const RenderContext& ctx, const RayBatch& rays,
                               std::array<bool, kSensorCount> heads, BatchRenderCache& cache);

struct BatchRenderGradient {
  Eigen::Matrix3Xd d_origins;
  Eigen::Matrix3Xd d_directions;
};

// Reverse pass for one sensor. Parameter gradients accumulate into `grads`
// (skipped when empty); ray gradients are returned when `want_rays`.
BatchRenderGradient render_batch_backward(const RenderContext& ctx, const BatchRenderCache& cache,
                                          SensorChannel sensor, const Eigen::MatrixXd& d_color,
                                          const Eigen::RowVectorXd& d_depth,
                                          const Eigen::RowVectorXd& d_opacity,
                                          std::span<double> grads, bool want_rays);

RenderResult render_ray(const FieldParams& params, const Ray& ray, SensorChannel sensor,
                        const EncodingConfig& enc, double alpha, const SamplingConfig& cfg,
                        StreamRng& rng);

struct RenderedImage {
  Image color;
  Image depth;    // 1 channel
  Image opacity;  // 1 channel
};

RenderedImage render_image(const FieldParams& params, const RigidTransform& pose,
                           const Intrinsics& k, SensorChannel sensor, const EncodingConfig& enc,
                           double alpha, const SamplingConfig& cfg, double near, double far);

struct RenderedPair {
  Image image_a;
  Image image_b;
  Image depth;
  Image opacity;
};

RenderedPair render_pair(const FieldParams& params, const RigidTransform& pose,
                         const Intrinsics& k, const EncodingConfig& enc, double alpha,
                         const SamplingConfig& cfg, double near, double far);

// Rays for every pixel of an image in row-major order, stream id = pixel index.
RayBatch image_rays(const Intrinsics& k, const RigidTransform& pose, double near, double far);

}  // namespace mbarf
