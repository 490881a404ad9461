#include "multibarf/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "multibarf/error.hpp"
#include "multibarf/evaluation.hpp"

namespace mbarf {

std::string to_string(Schedule s) {
  switch (s) {
    case Schedule::kAlternating: return "alternating";
    case Schedule::kSequential: return "sequential";
    case Schedule::kSequentialFrozen: return "sequential-frozen";
    case Schedule::kSingleA: return "single-a";
    case Schedule::kSingleB: return "single-b";
  }
  return "unknown";
}

Schedule schedule_from_string(const std::string& name) {
  if (name == "alternating") return Schedule::kAlternating;
  if (name == "sequential") return Schedule::kSequential;
  if (name == "sequential-frozen" || name == "sequential_frozen") return Schedule::kSequentialFrozen;
  if (name == "single-a" || name == "single_a") return Schedule::kSingleA;
  if (name == "single-b" || name == "single_b") return Schedule::kSingleB;
  fail(ErrorKind::kInvalidArgument, "unknown schedule '" + name + "'");
}

void TrainConfig::validate() const {
  require(iterations >= 0, "train: iterations must be >= 0");
  require(batch_pixels >= 1, "train: batch_pixels must be >= 1");
  require(alpha_ramp_start >= 0.0 && alpha_ramp_start < alpha_ramp_end && alpha_ramp_end <= 1.0,
          "train: need 0 <= alpha_ramp_start < alpha_ramp_end <= 1");
  require(lr_field_start > 0.0 && lr_field_end > 0.0 && lr_pose_start > 0.0 && lr_pose_end > 0.0,
          "train: learning rates must be positive");
  require(validation_fraction >= 0.0 && validation_fraction < 1.0,
          "train: validation_fraction must be in [0, 1)");
  require(log_interval >= 1, "train: log_interval must be >= 1");
}

RunConfig RunConfig::desk() {
  RunConfig c;
  c.encoding.position_bands = 6;
  c.encoding.direction_bands = 2;
  c.field.trunk_layers = 4;
  c.field.trunk_width = 64;
  c.field.skip_layer = 2;
  c.field.head_layers = 2;
  c.field.head_width = 32;
  c.sampling.samples_per_ray = 32;
  c.train.iterations = 10000;
  c.train.batch_pixels = 128;
  c.train.lr_field_start = 5e-3;
  c.train.lr_field_end = 5e-4;
  c.train.lr_pose_start = 1e-3;
  c.finalize();
  return c;
}

void RunConfig::finalize() {
  encoding.validate();
  field = FieldConfig::for_encoding(encoding, field);
  field.validate();
  sampling.validate(field.channels_per_sensor);
  train.validate();
}

long total_iterations(const TrainConfig& cfg) {
  switch (cfg.schedule) {
    case Schedule::kSequential:
    case Schedule::kSequentialFrozen: return 2 * cfg.iterations;
    default: return cfg.iterations;
  }
}

DatasetSplit split_dataset(size_t count, double fraction, std::uint64_t seed) {
  require(count > 0, "split_dataset: empty image list");
  require(fraction >= 0.0 && fraction < 1.0, "split_dataset: fraction must be in [0, 1)");
  // The epsilon absorbs representation error in products such as 0.13 * 300.
  const auto val_count =
      static_cast<size_t>(std::floor(fraction * static_cast<double>(count) + 1e-9));
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the permutation does not depend on
  // the standard library's shuffle implementation.
  for (size_t i = count; i-- > 1;) {
    const size_t j = static_cast<size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
  DatasetSplit split;
  split.validation.assign(order.begin(), order.begin() + static_cast<long>(val_count));
  split.train.assign(order.begin() + static_cast<long>(val_count), order.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

StepPlan mode_for_iteration(const TrainConfig& cfg, long iteration) {
  StepPlan plan;
  plan.phase_length = std::max<long>(cfg.iterations, 1);
  switch (cfg.schedule) {
    case Schedule::kAlternating:
      plan.sensor = iteration % 2 == 0 ? SensorChannel::kA : SensorChannel::kB;
      plan.phase_iteration = iteration;
      break;
    case Schedule::kSingleA:
      plan.sensor = SensorChannel::kA;
      plan.phase_iteration = iteration;
      break;
    case Schedule::kSingleB:
      plan.sensor = SensorChannel::kB;
      plan.phase_iteration = iteration;
      break;
    case Schedule::kSequential:
    case Schedule::kSequentialFrozen: {
      const bool second = iteration >= cfg.iterations;
      plan.sensor = second ? SensorChannel::kB : SensorChannel::kA;
      plan.phase_iteration = second ? iteration - cfg.iterations : iteration;
      if (second && cfg.schedule == Schedule::kSequentialFrozen) {
        plan.frozen = make_trainable_set(
            {ParamGroup::kTrunk, ParamGroup::kDensityHead, ParamGroup::kColorHeadA});
      }
      break;
    }
  }
  return plan;
}

double lr_at(long iteration, long total, double start, double end) {
  if (total <= 0) return start;
  const double frac = static_cast<double>(iteration) / static_cast<double>(total);
  return start * std::pow(end / start, frac);
}

double alpha_at(long iteration, long total, double ramp_start, double ramp_end, int bands) {
  if (total <= 0) return bands;
  const double progress = static_cast<double>(iteration) / static_cast<double>(total);
  if (progress < ramp_start) return 0.0;
  if (progress >= ramp_end) return bands;
  return bands * (progress - ramp_start) / (ramp_end - ramp_start);
}

PixelPool::PixelPool(const MultiSensorDataset& data, SensorChannel sensor,
                     const std::vector<int>& views)
    : sensor_(sensor), views_(views) {
  const SensorSet& set = data.sensor(sensor);
  for (size_t slot = 0; slot < views.size(); ++slot) {
    const View& v = set.views.at(static_cast<size_t>(views[slot]));
    for (int y = 0; y < v.image.height; ++y)
      for (int x = 0; x < v.image.width; ++x)
        if (!v.mask.at(x, y)) pixels_.push_back({static_cast<int>(slot), x, y});
  }
}

PixelBatch PixelPool::sample(const MultiSensorDataset& data, int batch_pixels,
                             std::mt19937_64& rng) const {
  if (pixels_.empty())
    fail(ErrorKind::kEmptyDomain,
         "sample_batch: sensor " + to_string(sensor_) + " has no unmasked training pixels");
  require(batch_pixels >= 1, "sample_batch: batch_pixels must be >= 1");
  const SensorSet& set = data.sensor(sensor_);
  PixelBatch batch;
  batch.sensor = sensor_;
  batch.entries.reserve(static_cast<size_t>(batch_pixels));
  std::uniform_int_distribution<size_t> pick(0, pixels_.size() - 1);
  for (int i = 0; i < batch_pixels; ++i) {
    const Ref& ref = pixels_[pick(rng)];
    const int view = views_[static_cast<size_t>(ref.slot)];
    const Image& img = set.views[static_cast<size_t>(view)].image;
    PixelEntry e;
    e.view = view;
    e.slot = ref.slot;
    e.x = ref.x;
    e.y = ref.y;
    e.target.resize(img.channels);
    for (int c = 0; c < img.channels; ++c) e.target(c) = img.at(ref.x, ref.y, c);
    batch.entries.push_back(std::move(e));
  }
  return batch;
}

PixelBatch sample_batch(const MultiSensorDataset& data, SensorChannel sensor,
                        const std::vector<int>& train_views, int batch_pixels,
                        std::mt19937_64& rng) {
  return PixelPool(data, sensor, train_views).sample(data, batch_pixels, rng);
}

double photometric_loss(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& target) {
  require(predicted.rows() == target.rows() && predicted.cols() == target.cols(),
          "photometric_loss: shape mismatch");
  require(predicted.size() > 0, "photometric_loss: empty batch");
  return (predicted - target).squaredNorm() / static_cast<double>(predicted.size());
}

double TrainState::current_alpha() const {
  const TrainConfig& cfg = config.train;
  const long total = total_iterations(cfg);
  if (total == 0) return config.encoding.position_bands;
  // Alpha reached by the last completed step, so a state saved at a phase
  // boundary renders with the finished phase's bands rather than the next
  // phase's starting gate.
  if (iteration == 0)
    return alpha_at(0, mode_for_iteration(cfg, 0).phase_length, cfg.alpha_ramp_start,
                    cfg.alpha_ramp_end, config.encoding.position_bands);
  const StepPlan plan = mode_for_iteration(cfg, std::min(iteration, total) - 1);
  return alpha_at(plan.phase_iteration + 1, plan.phase_length, cfg.alpha_ramp_start,
                  cfg.alpha_ramp_end, config.encoding.position_bands);
}

RigidTransform TrainState::pose(const MultiSensorDataset& data, SensorChannel s, int slot) const {
  const auto si = static_cast<size_t>(index_of(s));
  const int view = train_views[si].at(static_cast<size_t>(slot));
  return apply_twist(poses[si][static_cast<size_t>(slot)].twist,
                     data.sensor(s).views.at(static_cast<size_t>(view)).initial_pose);
}

TrainState init_train_state(const MultiSensorDataset& data, RunConfig config) {
  config.finalize();
  data.validate();
  require(data.channels() == config.field.channels_per_sensor,
          "train: dataset channel count does not match channels_per_sensor");
  TrainState state;
  state.config = config;
  state.params = init_params(config.field, config.train.seed);
  state.field_adam.resize(state.params.layout.tensors.size());
  for (size_t i = 0; i < state.field_adam.size(); ++i) {
    const size_t n = state.params.layout.tensors[i].size();
    state.field_adam[i] = AdamSlot{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0};
  }
  for (SensorChannel s : kSensors) {
    const auto si = static_cast<size_t>(index_of(s));
    const size_t count = data.sensor(s).views.size();
    if (count > 0) {
      const DatasetSplit split =
          split_dataset(count, config.train.validation_fraction, mix64(config.train.seed + si));
      state.train_views[si] = split.train;
      state.validation_views[si] = split.validation;
    }
    state.poses[si].resize(state.train_views[si].size());
    state.cameras.intrinsics[si] = data.sensor(s).intrinsics;
  }
  for (SensorChannel s : kSensors)
    state.config.sampling.background[static_cast<size_t>(index_of(s))] = data.sensor(s).background;
  state.cameras.near = data.near;
  state.cameras.far = data.far;
  state.rng.seed(mix64(config.train.seed ^ 0x5eedULL));
  return state;
}

std::string to_json_line(const LogRecord& r) {
  nlohmann::json j;
  j["iteration"] = r.iteration;
  j["mode"] = to_string(r.mode);
  j["loss"] = r.loss;
  j["lr_field"] = r.lr_field;
  j["lr_pose"] = r.lr_pose;
  j["alpha"] = r.alpha;
  for (SensorChannel s : kSensors) {
    const auto& v = r.validation_psnr[static_cast<size_t>(index_of(s))];
    if (v) j["val_psnr_" + to_string(s)] = std::isfinite(*v) ? nlohmann::json(*v) : nlohmann::json("inf");
  }
  return j.dump();
}

void adam_update(std::span<double> values, std::span<const double> grads, AdamSlot& slot,
                 double lr, const TrainConfig& cfg) {
  require(values.size() == grads.size() && slot.m.size() == values.size() &&
              slot.v.size() == values.size(),
          "adam_update: size mismatch");
  slot.steps += 1;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(slot.steps));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(slot.steps));
  for (size_t i = 0; i < values.size(); ++i) {
    const double g = grads[i];
    slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g;
    slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g * g;
    const double m_hat = slot.m[i] / c1;
    const double v_hat = slot.v[i] / c2;
    values[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
  }
}

namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;

// Rays for a set of pixels, each rendered from the pose of its slot.
struct PoseBatch {
  RayBatch rays;
  Eigen::Matrix3Xd camera_dirs;  // unit camera-frame direction per ray
  std::vector<int> slots;
  Eigen::MatrixXd targets;  // C x R
};

struct BatchGrad {
  double loss = 0.0;
  Eigen::MatrixXd predicted;
  std::vector<double> field;     // empty unless requested
  std::vector<Vec6> twists;      // indexed by slot
};

// Loss of a pose batch plus gradients with respect to the field (optional)
// and the twist of every slot present.
BatchGrad batch_gradient(const RunConfig& config, const FieldParams& params,
                         SensorChannel sensor, const PoseBatch& batch,
                         const std::vector<Twist>& twists,
                         const std::vector<RigidTransform>& initial, double alpha,
                         std::uint64_t sampling_seed, bool want_field) {
  SamplingConfig sampling = config.sampling;
  sampling.seed = sampling_seed;
  const RenderContext ctx{params, config.encoding, sampling, alpha};
  std::array<bool, kSensorCount> heads{};
  heads[static_cast<size_t>(index_of(sensor))] = true;

  BatchRenderCache cache;
  const BatchRenderOutput out = render_batch(ctx, batch.rays, heads, cache);
  BatchGrad g;
  g.predicted = out.color[static_cast<size_t>(index_of(sensor))];
  g.loss = photometric_loss(g.predicted, batch.targets);

  const Eigen::Index r_count = batch.rays.size();
  const Eigen::MatrixXd d_color =
      (2.0 / static_cast<double>(g.predicted.size())) * (g.predicted - batch.targets);
  const Eigen::RowVectorXd zeros = Eigen::RowVectorXd::Zero(r_count);
  if (want_field) g.field.assign(params.values.size(), 0.0);
  const BatchRenderGradient rg =
      render_batch_backward(ctx, cache, sensor, d_color, zeros, zeros, g.field, true);

  // origin = t, direction = R * d_cam, so dL/dR += dL/ddir * d_cam^T.
  std::vector<Mat3> d_rot(twists.size(), Mat3::Zero());
  std::vector<Vec3> d_trans(twists.size(), Vec3::Zero());
  std::vector<bool> present(twists.size(), false);
  for (Eigen::Index r = 0; r < r_count; ++r) {
    const auto slot = static_cast<size_t>(batch.slots[static_cast<size_t>(r)]);
    present[slot] = true;
    d_trans[slot] += rg.d_origins.col(r);
    d_rot[slot] += rg.d_directions.col(r) * batch.camera_dirs.col(r).transpose();
  }
  g.twists.assign(twists.size(), Vec6::Zero());
  for (size_t slot = 0; slot < twists.size(); ++slot) {
    if (!present[slot]) continue;
    const PoseJacobian jac = apply_twist_jacobian(twists[slot], initial[slot]);
    Eigen::Matrix<double, 12, 1> upstream;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) upstream(3 * a + b) = d_rot[slot](a, b);
    upstream.tail<3>() = d_trans[slot];
    g.twists[slot] = jac.transpose() * upstream;
  }
  return g;
}

PoseBatch make_pose_batch(const MultiSensorDataset& data, const PixelBatch& pixels,
                          const std::vector<RigidTransform>& poses) {
  const SensorSet& set = data.sensor(pixels.sensor);
  const auto r_count = static_cast<Eigen::Index>(pixels.entries.size());
  const int channels = set.background.size() > 0 ? static_cast<int>(set.background.size()) : 3;
  PoseBatch b;
  b.rays.origins.resize(3, r_count);
  b.rays.directions.resize(3, r_count);
  b.rays.streams.resize(static_cast<size_t>(r_count));
  b.rays.near = data.near;
  b.rays.far = data.far;
  b.camera_dirs.resize(3, r_count);
  b.targets.resize(channels, r_count);
  b.slots.resize(static_cast<size_t>(r_count));
  for (Eigen::Index r = 0; r < r_count; ++r) {
    const PixelEntry& e = pixels.entries[static_cast<size_t>(r)];
    const RigidTransform& pose = poses[static_cast<size_t>(e.slot)];
    const PixelCoord px = pixel_center(e.x, e.y);
    const Ray ray = pixel_to_ray(set.intrinsics, pose, px, data.near, data.far);
    b.rays.origins.col(r) = ray.origin;
    b.rays.directions.col(r) = ray.direction;
    b.rays.streams[static_cast<size_t>(r)] = static_cast<std::uint64_t>(r);
    b.camera_dirs.col(r) = camera_direction(set.intrinsics, px);
    b.targets.col(r) = e.target;
    b.slots[static_cast<size_t>(r)] = e.slot;
  }
  return b;
}

std::uint64_t step_seed(const TrainConfig& cfg, long iteration) {
  return mix64(cfg.seed * 0x100000001b3ULL + static_cast<std::uint64_t>(iteration));
}

}  // namespace

Trainer::Trainer(const MultiSensorDataset& data, TrainState& state) : data_(data), state_(state) {
  for (SensorChannel s : kSensors) {
    const auto si = static_cast<size_t>(index_of(s));
    require(state.poses[si].size() == state.train_views[si].size(),
            "trainer: pose slots do not match training views");
    pools_[si] = PixelPool(data, s, state.train_views[si]);
  }
}

Trainer::Gradients Trainer::compute_gradients(const PixelBatch& batch, double alpha,
                                              std::uint64_t sampling_seed) const {
  const auto si = static_cast<size_t>(index_of(batch.sensor));
  std::vector<Twist> twists;
  std::vector<RigidTransform> initial, poses;
  for (size_t slot = 0; slot < state_.poses[si].size(); ++slot) {
    twists.push_back(state_.poses[si][slot].twist);
    initial.push_back(
        data_.sensor(batch.sensor).views[static_cast<size_t>(state_.train_views[si][slot])].initial_pose);
    poses.push_back(apply_twist(twists.back(), initial.back()));
  }
  const PoseBatch pb = make_pose_batch(data_, batch, poses);
  BatchGrad g = batch_gradient(state_.config, state_.params, batch.sensor, pb, twists, initial,
                               alpha, sampling_seed, true);
  return {g.loss, std::move(g.field), std::move(g.twists)};
}

StepResult Trainer::step() {
  TrainState& st = state_;
  const TrainConfig& cfg = st.config.train;
  StepResult res;
  res.plan = mode_for_iteration(cfg, st.iteration);
  const StepPlan& plan = res.plan;
  res.alpha = alpha_at(plan.phase_iteration, plan.phase_length, cfg.alpha_ramp_start,
                       cfg.alpha_ramp_end, st.config.encoding.position_bands);
  res.lr_field = lr_at(plan.phase_iteration, plan.phase_length, cfg.lr_field_start, cfg.lr_field_end);
  res.lr_pose = lr_at(plan.phase_iteration, plan.phase_length, cfg.lr_pose_start, cfg.lr_pose_end);

  const PixelBatch batch = pool(plan.sensor).sample(data_, cfg.batch_pixels, st.rng);
  const Gradients g = compute_gradients(batch, res.alpha, step_seed(cfg, st.iteration));
  res.loss = g.loss;
  if (!std::isfinite(g.loss)) {
    throw DivergedError(st.iteration, "training diverged: non-finite loss at iteration " +
                                          std::to_string(st.iteration));
  }

  const TrainableSet trainable = select_trainable(st.params, plan.sensor, plan.frozen);
  for (size_t t : trainable.tensor_indices(st.params.layout)) {
    const TensorInfo& info = st.params.layout.tensors[t];
    adam_update(std::span<double>(st.params.values).subspan(info.offset, info.size()),
                std::span<const double>(g.field).subspan(info.offset, info.size()),
                st.field_adam[t], res.lr_field, cfg);
  }

  const auto si = static_cast<size_t>(index_of(plan.sensor));
  std::vector<bool> present(st.poses[si].size(), false);
  for (const PixelEntry& e : batch.entries) present[static_cast<size_t>(e.slot)] = true;
  for (size_t slot = 0; slot < present.size(); ++slot) {
    if (!present[slot]) continue;
    PoseSlot& ps = st.poses[si][slot];
    Vec6 x = ps.twist.as_vector();
    const Vec6& grad = g.twists[slot];
    adam_update(std::span<double>(x.data(), 6), std::span<const double>(grad.data(), 6), ps.adam,
                res.lr_pose, cfg);
    ps.twist = Twist::from_vector(x);
  }
  st.iteration += 1;
  return res;
}

Twist refine_pose(const TrainState& state, const View& view, const Intrinsics& k,
                  SensorChannel sensor, const RigidTransform& initial, double near, double far,
                  const RefineOptions& options) {
  require(options.batch_pixels >= 1, "refine_pose: batch_pixels must be >= 1");
  std::vector<std::pair<int, int>> pixels;
  for (int y = 0; y < view.image.height; ++y)
    for (int x = 0; x < view.image.width; ++x)
      if (!view.mask.at(x, y)) pixels.emplace_back(x, y);
  if (pixels.empty())
    fail(ErrorKind::kEmptyDomain, "refine_pose: view '" + view.name + "' is fully masked");

  MultiSensorDataset single;
  single.near = near;
  single.far = far;
  single.sensor(sensor).intrinsics = k;
  single.sensor(sensor).background = state.config.sampling.background[static_cast<size_t>(index_of(sensor))];

  const double alpha = state.current_alpha();
  std::mt19937_64 rng(mix64(options.seed));
  std::uniform_int_distribution<size_t> pick(0, pixels.size() - 1);
  std::vector<Twist> twists(1);
  const std::vector<RigidTransform> initial_set{initial};
  AdamSlot adam{std::vector<double>(6, 0.0), std::vector<double>(6, 0.0), 0};
  for (int it = 0; it < options.iterations; ++it) {
    PixelBatch batch;
    batch.sensor = sensor;
    for (int i = 0; i < options.batch_pixels; ++i) {
      const auto [x, y] = pixels[pick(rng)];
      PixelEntry e;
      e.x = x;
      e.y = y;
      e.target.resize(view.image.channels);
      for (int c = 0; c < view.image.channels; ++c) e.target(c) = view.image.at(x, y, c);
      batch.entries.push_back(std::move(e));
    }
    const std::vector<RigidTransform> poses{apply_twist(twists[0], initial)};
    const PoseBatch pb = make_pose_batch(single, batch, poses);
    const BatchGrad g = batch_gradient(state.config, state.params, sensor, pb, twists, initial_set,
                                       alpha, mix64(options.seed + 1 + static_cast<std::uint64_t>(it)),
                                       false);
    if (!std::isfinite(g.loss)) break;
    Vec6 x = twists[0].as_vector();
    adam_update(std::span<double>(x.data(), 6), std::span<const double>(g.twists[0].data(), 6),
                adam, lr_at(it, options.iterations, options.lr_start, options.lr_end),
                state.config.train);
    twists[0] = Twist::from_vector(x);
  }
  return twists[0];
}

StepResult train_step(TrainState& state, const MultiSensorDataset& data) {
  Trainer trainer(data, state);
  return trainer.step();
}

namespace {

std::optional<double> validation_psnr(const TrainState& st, const MultiSensorDataset& data,
                                      SensorChannel s) {
  const auto si = static_cast<size_t>(index_of(s));
  if (st.validation_views[si].empty()) return std::nullopt;
  SamplingConfig sampling = st.config.sampling;
  sampling.stratified = false;
  double sum = 0.0;
  for (int view : st.validation_views[si]) {
    const View& v = data.sensor(s).views[static_cast<size_t>(view)];
    const RenderedImage r = render_image(st.params, v.initial_pose, data.sensor(s).intrinsics, s,
                                         st.config.encoding, st.current_alpha(), sampling,
                                         data.near, data.far);
    sum += psnr(r.color, v.image, v.mask.empty() ? nullptr : &v.mask);
  }
  return sum / static_cast<double>(st.validation_views[si].size());
}

}  // namespace

void train_until(TrainState& state, const MultiSensorDataset& data, long until,
                 const TrainHooks& hooks) {
  const TrainConfig& cfg = state.config.train;
  until = std::min(until, total_iterations(cfg));
  if (state.iteration >= until) return;
  Trainer trainer(data, state);
  TrainState last_good = state;
  while (state.iteration < until) {
    StepResult res;
    try {
      res = trainer.step();
    } catch (const DivergedError&) {
      if (hooks.on_checkpoint) hooks.on_checkpoint(last_good);
      throw;
    }
    const long done = state.iteration;
    const bool log_now = done % cfg.log_interval == 0 || done == until;
    const bool validate_now = cfg.validation_interval > 0 &&
                              (done % cfg.validation_interval == 0 || done == total_iterations(cfg));
    if ((log_now || validate_now) && hooks.on_log) {
      LogRecord rec;
      rec.iteration = done;
      rec.mode = res.plan.sensor;
      rec.loss = res.loss;
      rec.lr_field = res.lr_field;
      rec.lr_pose = res.lr_pose;
      rec.alpha = res.alpha;
      if (validate_now)
        for (SensorChannel s : kSensors)
          rec.validation_psnr[static_cast<size_t>(index_of(s))] = validation_psnr(state, data, s);
      hooks.on_log(rec);
    }
    if (cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0) {
      last_good = state;
      if (hooks.on_checkpoint) hooks.on_checkpoint(state);
    }
  }
}

TrainState train(const MultiSensorDataset& data, const RunConfig& config, const TrainHooks& hooks) {
  TrainState state = init_train_state(data, config);
  const TrainConfig& cfg = state.config.train;
  switch (cfg.schedule) {
    case Schedule::kAlternating:
      for (SensorChannel s : kSensors)
        require(state.train_views[static_cast<size_t>(index_of(s))].size() >= 2,
                "train: alternating schedule needs >= 2 training images per sensor");
      break;
    case Schedule::kSingleA:
      require(!state.train_views[0].empty(), "train: no sensor-A training images");
      break;
    case Schedule::kSingleB:
      require(!state.train_views[1].empty(), "train: no sensor-B training images");
      break;
    default:
      require(!state.train_views[0].empty() && !state.train_views[1].empty(),
              "train: sequential schedules need training images for both sensors");
  }
  train_until(state, data, total_iterations(cfg), hooks);
  return state;
}

}  // namespace mbarf
