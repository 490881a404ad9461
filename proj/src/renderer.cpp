#include "multibarf/renderer.hpp"

#include <cmath>

#include "multibarf/error.hpp"

namespace mbarf {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

StreamRng::StreamRng(std::uint64_t seed, std::uint64_t stream)
    : state_(mix64(seed ^ mix64(stream + 0x632be59bd9b4e019ULL))) {}

std::uint64_t StreamRng::next() {
  state_ += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double StreamRng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

void SamplingConfig::validate(int channels) const {
  require(samples_per_ray >= 2, "sampling: samples_per_ray must be >= 2");
  for (const auto& bg : background)
    require(bg.size() == channels, "sampling: background size does not match channel count");
}

namespace {

void fill_depths(double near, double far, const SamplingConfig& cfg, StreamRng& rng,
                 double* out) {
  const int n = cfg.samples_per_ray;
  const double bin = (far - near) / n;
  for (int i = 0; i < n; ++i) {
    const double offset = cfg.stratified ? rng.uniform() : 0.5;
    out[i] = near + (i + offset) * bin;
  }
}

// Shared forward arithmetic. Writes per-sample weights and transmittance
// (trans[i] = prod_{j<i}(1 - a_j), with trans[N] the residual).
struct RayComposite {
  double depth = 0.0;
  double opacity = 0.0;
};

template <typename SigmaT, typename DepthT, typename WeightT, typename TransT>
RayComposite composite_weights(const SigmaT& sigma, const DepthT& depth, double far,
                               WeightT&& weights, TransT&& trans) {
  const Eigen::Index n = sigma.size();
  // Transmittance as exp(-cumulative optical depth) keeps the telescoping
  // identity exact up to rounding.
  double optical = 0.0;
  trans(0) = 1.0;
  RayComposite out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double delta = (i + 1 < n ? depth(i + 1) : far) - depth(i);
    const double tau = sigma(i) * delta;
    const double t_next = std::exp(-(optical + tau));
    weights(i) = trans(i) - t_next;
    optical += tau;
    trans(i + 1) = t_next;
    out.depth += weights(i) * depth(i);
  }
  out.opacity = 1.0 - trans(n);
  out.depth += trans(n) * far;
  return out;
}

}  // namespace

Eigen::VectorXd sample_depths(const Ray& ray, const SamplingConfig& cfg, StreamRng& rng) {
  require(cfg.samples_per_ray >= 2, "sample_depths: samples_per_ray must be >= 2");
  Eigen::VectorXd out(cfg.samples_per_ray);
  fill_depths(ray.near, ray.far, cfg, rng, out.data());
  return out;
}

RenderResult composite(const Eigen::VectorXd& sigmas, const Eigen::MatrixXd& colors,
                       const Eigen::VectorXd& depths, double far,
                       const Eigen::VectorXd& background) {
  const Eigen::Index n = sigmas.size();
  require(n >= 1 && depths.size() == n && colors.cols() == n, "composite: size mismatch");
  require(background.size() == colors.rows(), "composite: background size mismatch");
  require((sigmas.array() >= 0.0).all(), "composite: negative density");
  Eigen::VectorXd weights(n), trans(n + 1);
  const RayComposite rc = composite_weights(sigmas, depths, far, weights, trans);
  RenderResult r;
  r.color = colors * weights + trans(n) * background;
  r.depth = rc.depth;
  r.opacity = rc.opacity;
  return r;
}

CompositeGradient composite_backward(const Eigen::VectorXd& sigmas, const Eigen::MatrixXd& colors,
                                     const Eigen::VectorXd& depths, double far,
                                     const Eigen::VectorXd& background,
                                     const Eigen::VectorXd& d_color, double d_depth,
                                     double d_opacity) {
  const Eigen::Index n = sigmas.size();
  require(n >= 1 && depths.size() == n && colors.cols() == n, "composite_backward: size mismatch");
  require(d_color.size() == colors.rows() && background.size() == colors.rows(),
          "composite_backward: upstream color size mismatch");
  Eigen::VectorXd weights(n), trans(n + 1);
  composite_weights(sigmas, depths, far, weights, trans);

  CompositeGradient g;
  g.colors = d_color * weights.transpose();
  // e_i = dL/dw_i; with w_i = T_i - T_{i+1},
  // dL/dtau_i = e_i T_{i+1} - sum_{k>i} e_k w_k.
  Eigen::VectorXd e(n);
  for (Eigen::Index i = 0; i < n; ++i)
    e(i) = d_color.dot(colors.col(i) - background) + d_depth * (depths(i) - far) + d_opacity;
  Eigen::VectorXd d_tau(n);
  double tail = 0.0;
  for (Eigen::Index i = n; i-- > 0;) {
    d_tau(i) = e(i) * trans(i + 1) - tail;
    tail += e(i) * weights(i);
  }
  g.sigmas.resize(n);
  g.depths = d_depth * weights;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double delta = (i + 1 < n ? depths(i + 1) : far) - depths(i);
    g.sigmas(i) = d_tau(i) * delta;
    const double d_delta = d_tau(i) * sigmas(i);
    g.depths(i) -= d_delta;
    if (i + 1 < n) g.depths(i + 1) += d_delta;
  }
  return g;
}

BatchRenderOutput render_batch(const RenderContext& ctx, const RayBatch& rays,
                               std::array<bool, kSensorCount> heads, BatchRenderCache& cache) {
  const SamplingConfig& cfg = ctx.sampling;
  const int channels = ctx.params.config.channels_per_sensor;
  cfg.validate(channels);
  require(rays.near > 0.0 && rays.far > rays.near, "render: need 0 < near < far");
  require(rays.directions.cols() == rays.size() &&
              static_cast<Eigen::Index>(rays.streams.size()) == rays.size(),
          "render: ray batch fields disagree in length");
  const Eigen::Index r_count = rays.size();
  const Eigen::Index n = cfg.samples_per_ray;
  const Eigen::Index p_count = r_count * n;

  cache.alpha = ctx.alpha;
  cache.far = rays.far;
  cache.directions = rays.directions;
  cache.depths.resize(n, r_count);
  cache.points.resize(3, p_count);
  for (Eigen::Index r = 0; r < r_count; ++r) {
    StreamRng rng(cfg.seed, rays.streams[static_cast<size_t>(r)]);
    fill_depths(rays.near, rays.far, cfg, rng, cache.depths.col(r).data());
    for (Eigen::Index i = 0; i < n; ++i)
      cache.points.col(r * n + i) = rays.origins.col(r) + cache.depths(i, r) * rays.directions.col(r);
  }

  Eigen::MatrixXd enc_pos, enc_dir_rays;
  encode_columns(cache.points, ctx.encoding, ctx.alpha, ctx.encoding.position_bands, enc_pos);
  encode_columns(rays.directions, ctx.encoding, ctx.alpha, ctx.encoding.direction_bands,
                 enc_dir_rays);
  Eigen::MatrixXd enc_dir(enc_dir_rays.rows(), p_count);
  for (Eigen::Index r = 0; r < r_count; ++r)
    enc_dir.middleCols(r * n, n).colwise() = enc_dir_rays.col(r);

  FieldBatchOutput field = forward_batch(ctx.params, enc_pos, enc_dir, heads, cache.field);
  cache.sigma = std::move(field.sigma);

  BatchRenderOutput out;
  out.depth.resize(r_count);
  out.opacity.resize(r_count);
  Eigen::VectorXd weights(n), trans(n + 1);
  std::array<bool, kSensorCount> first{true, true};
  for (Eigen::Index r = 0; r < r_count; ++r) {
    const auto sigma = cache.sigma.segment(r * n, n);
    const RayComposite rc = composite_weights(sigma, cache.depths.col(r), rays.far, weights, trans);
    out.depth(r) = rc.depth;
    out.opacity(r) = rc.opacity;
    for (SensorChannel s : kSensors) {
      const auto si = static_cast<size_t>(index_of(s));
      if (!heads[si]) continue;
      if (first[si]) {
        out.color[si].resize(channels, r_count);
        first[si] = false;
      }
      out.color[si].col(r) =
          field.color[si].middleCols(r * n, n) * weights + trans(n) * cfg.background[si];
    }
  }
  for (SensorChannel s : kSensors) {
    const auto si = static_cast<size_t>(index_of(s));
    if (heads[si]) cache.color[si] = std::move(field.color[si]);
  }
  return out;
}

BatchRenderGradient render_batch_backward(const RenderContext& ctx, const BatchRenderCache& cache,
                                          SensorChannel sensor, const Eigen::MatrixXd& d_color,
                                          const Eigen::RowVectorXd& d_depth,
                                          const Eigen::RowVectorXd& d_opacity,
                                          std::span<double> grads, bool want_rays) {
  const auto si = static_cast<size_t>(index_of(sensor));
  const Eigen::Index r_count = cache.depths.cols();
  const Eigen::Index n = cache.depths.rows();
  const Eigen::Index p_count = r_count * n;
  const int channels = ctx.params.config.channels_per_sensor;
  require(cache.field.head_done[si], "render backward: sensor head was not rendered");
  require(d_color.rows() == channels && d_color.cols() == r_count && d_depth.size() == r_count &&
              d_opacity.size() == r_count,
          "render backward: upstream gradient shape mismatch");

  const Eigen::MatrixXd& colors = cache.color[si];
  const Eigen::VectorXd& bg = ctx.sampling.background[si];
  Eigen::RowVectorXd d_sigma(p_count);
  Eigen::MatrixXd d_sample_color(channels, p_count);
  Eigen::VectorXd weights(n), trans(n + 1), e(n);
  const double ray_far = cache.far;
  for (Eigen::Index r = 0; r < r_count; ++r) {
    const auto sigma = cache.sigma.segment(r * n, n);
    const auto depth = cache.depths.col(r);
    composite_weights(sigma, depth, ray_far, weights, trans);
    const Eigen::VectorXd dc = d_color.col(r);
    d_sample_color.middleCols(r * n, n) = dc * weights.transpose();
    for (Eigen::Index i = 0; i < n; ++i)
      e(i) = dc.dot(colors.col(r * n + i) - bg) + d_depth(r) * (depth(i) - ray_far) + d_opacity(r);
    double tail = 0.0;
    for (Eigen::Index i = n; i-- > 0;) {
      const double d_tau = e(i) * trans(i + 1) - tail;
      tail += e(i) * weights(i);
      const double delta = (i + 1 < n ? depth(i + 1) : ray_far) - depth(i);
      d_sigma(r * n + i) = d_tau * delta;
    }
  }

  BatchRenderGradient out;
  Eigen::MatrixXd d_enc_pos, d_enc_dir;
  backward_batch(ctx.params, cache.field, sensor, d_sigma, d_sample_color, grads,
                 want_rays ? &d_enc_pos : nullptr, want_rays ? &d_enc_dir : nullptr);
  if (!want_rays) return out;

  Eigen::MatrixXd d_points;
  encode_columns_backward(cache.points, ctx.encoding, ctx.alpha, ctx.encoding.position_bands,
                          d_enc_pos, d_points);
  Eigen::MatrixXd d_enc_dir_rays(d_enc_dir.rows(), r_count);
  for (Eigen::Index r = 0; r < r_count; ++r)
    d_enc_dir_rays.col(r) = d_enc_dir.middleCols(r * n, n).rowwise().sum();
  Eigen::MatrixXd d_dirs;
  encode_columns_backward(cache.directions, ctx.encoding, ctx.alpha,
                          ctx.encoding.direction_bands, d_enc_dir_rays, d_dirs);

  out.d_origins.resize(3, r_count);
  out.d_directions.resize(3, r_count);
  for (Eigen::Index r = 0; r < r_count; ++r) {
    const auto block = d_points.middleCols(r * n, n);
    out.d_origins.col(r) = block.rowwise().sum();
    out.d_directions.col(r) = block * cache.depths.col(r) + d_dirs.col(r);
  }
  return out;
}

RenderResult render_ray(const FieldParams& params, const Ray& ray, SensorChannel sensor,
                        const EncodingConfig& enc, double alpha, const SamplingConfig& cfg,
                        StreamRng& rng) {
  // The single-ray path draws its depths from the caller's generator, then
  // evaluates through the same batch machinery.
  Eigen::VectorXd depths = sample_depths(ray, cfg, rng);
  Eigen::MatrixXd points(3, depths.size());
  for (Eigen::Index i = 0; i < depths.size(); ++i)
    points.col(i) = ray.origin + depths(i) * ray.direction;
  Eigen::MatrixXd enc_pos, enc_dir_one;
  encode_columns(points, enc, alpha, enc.position_bands, enc_pos);
  encode_columns(ray.direction, enc, alpha, enc.direction_bands, enc_dir_one);
  Eigen::MatrixXd enc_dir = enc_dir_one.replicate(1, depths.size());
  std::array<bool, kSensorCount> heads{};
  heads[static_cast<size_t>(index_of(sensor))] = true;
  FieldCache cache;
  FieldBatchOutput out = forward_batch(params, enc_pos, enc_dir, heads, cache);
  return composite(out.sigma.transpose(), out.color[static_cast<size_t>(index_of(sensor))], depths,
                   ray.far, cfg.background[static_cast<size_t>(index_of(sensor))]);
}

RayBatch image_rays(const Intrinsics& k, const RigidTransform& pose, double near, double far) {
  k.validate();
  RayBatch rays;
  const Eigen::Index count = static_cast<Eigen::Index>(k.width) * k.height;
  rays.origins.resize(3, count);
  rays.directions.resize(3, count);
  rays.streams.resize(static_cast<size_t>(count));
  rays.near = near;
  rays.far = far;
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Eigen::Index idx = static_cast<Eigen::Index>(y) * k.width + x;
      const Ray ray = pixel_to_ray(k, pose, pixel_center(x, y), near, far);
      rays.origins.col(idx) = ray.origin;
      rays.directions.col(idx) = ray.direction;
      rays.streams[static_cast<size_t>(idx)] = static_cast<std::uint64_t>(idx);
    }
  }
  return rays;
}

namespace {

constexpr Eigen::Index kImageChunk = 1024;

template <typename Sink>
void render_chunks(const RenderContext& ctx, const RayBatch& all,
                   std::array<bool, kSensorCount> heads, Sink&& sink) {
  BatchRenderCache cache;
  for (Eigen::Index start = 0; start < all.size(); start += kImageChunk) {
    const Eigen::Index len = std::min(kImageChunk, all.size() - start);
    RayBatch chunk;
    chunk.origins = all.origins.middleCols(start, len);
    chunk.directions = all.directions.middleCols(start, len);
    chunk.streams.assign(all.streams.begin() + start, all.streams.begin() + start + len);
    chunk.near = all.near;
    chunk.far = all.far;
    sink(start, render_batch(ctx, chunk, heads, cache));
  }
}

void copy_color(const Eigen::MatrixXd& src, Eigen::Index start, Image& dst) {
  for (Eigen::Index j = 0; j < src.cols(); ++j)
    for (Eigen::Index c = 0; c < src.rows(); ++c)
      dst.data[static_cast<size_t>((start + j) * src.rows() + c)] = src(c, j);
}

}  // namespace

RenderedImage render_image(const FieldParams& params, const RigidTransform& pose,
                           const Intrinsics& k, SensorChannel sensor, const EncodingConfig& enc,
                           double alpha, const SamplingConfig& cfg, double near, double far) {
  const RayBatch rays = image_rays(k, pose, near, far);
  const RenderContext ctx{params, enc, cfg, alpha};
  const int channels = params.config.channels_per_sensor;
  RenderedImage out{Image(k.width, k.height, channels), Image(k.width, k.height, 1),
                    Image(k.width, k.height, 1)};
  std::array<bool, kSensorCount> heads{};
  const auto si = static_cast<size_t>(index_of(sensor));
  heads[si] = true;
  render_chunks(ctx, rays, heads, [&](Eigen::Index start, const BatchRenderOutput& b) {
    copy_color(b.color[si], start, out.color);
    for (Eigen::Index j = 0; j < b.depth.size(); ++j) {
      out.depth.data[static_cast<size_t>(start + j)] = b.depth(j);
      out.opacity.data[static_cast<size_t>(start + j)] = b.opacity(j);
    }
  });
  return out;
}

RenderedPair render_pair(const FieldParams& params, const RigidTransform& pose,
                         const Intrinsics& k, const EncodingConfig& enc, double alpha,
                         const SamplingConfig& cfg, double near, double far) {
  const RayBatch rays = image_rays(k, pose, near, far);
  const RenderContext ctx{params, enc, cfg, alpha};
  const int channels = params.config.channels_per_sensor;
  RenderedPair out{Image(k.width, k.height, channels), Image(k.width, k.height, channels),
                   Image(k.width, k.height, 1), Image(k.width, k.height, 1)};
  render_chunks(ctx, rays, {true, true}, [&](Eigen::Index start, const BatchRenderOutput& b) {
    copy_color(b.color[0], start, out.image_a);
    copy_color(b.color[1], start, out.image_b);
    for (Eigen::Index j = 0; j < b.depth.size(); ++j) {
      out.depth.data[static_cast<size_t>(start + j)] = b.depth(j);
      out.opacity.data[static_cast<size_t>(start + j)] = b.opacity(j);
    }
  });
  return out;
}

}  // namespace mbarf
