#include "multibarf/field.hpp"

#include <cmath>
#include <random>

#include "multibarf/error.hpp"

namespace mbarf {

std::string to_string(SensorChannel s) { return s == SensorChannel::kA ? "A" : "B"; }

SensorChannel sensor_from_string(const std::string& name) {
  if (name == "A" || name == "a") return SensorChannel::kA;
  if (name == "B" || name == "b") return SensorChannel::kB;
  fail(ErrorKind::kInvalidArgument, "unknown sensor channel '" + name + "'");
}

std::string to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::kTrunk: return "trunk";
    case ParamGroup::kDensityHead: return "density_head";
    case ParamGroup::kColorHeadA: return "color_head_A";
    case ParamGroup::kColorHeadB: return "color_head_B";
  }
  return "unknown";
}

void FieldConfig::validate() const {
  require(trunk_layers >= 1 && trunk_width >= 1, "field: trunk must have at least one layer");
  require(head_layers >= 1 && head_width >= 1, "field: heads must have at least one layer");
  require(trunk_layers >= head_layers, "field: trunk_layers must be >= head_layers");
  require(channels_per_sensor >= 1, "field: channels_per_sensor must be >= 1");
  require(position_dim >= 1 && direction_dim >= 0, "field: bad encoded input sizes");
}

FieldConfig FieldConfig::for_encoding(const EncodingConfig& enc, FieldConfig base) {
  base.position_dim = enc.position_dim();
  base.direction_dim = enc.direction_dim();
  return base;
}

FieldConfig FieldConfig::for_encoding(const EncodingConfig& enc) {
  return for_encoding(enc, FieldConfig{});
}

FieldLayout FieldLayout::build(const FieldConfig& cfg) {
  cfg.validate();
  FieldLayout layout;
  auto add = [&](const std::string& name, ParamGroup group, int rows, int cols) {
    TensorInfo t{name, group, rows, cols, layout.total_size};
    layout.total_size += t.size();
    layout.tensors.push_back(std::move(t));
    return layout.tensors.size() - 1;
  };
  auto add_layer = [&](const std::string& name, ParamGroup group, int out, int in) {
    LayerRef ref;
    ref.weight = add(name + ".weight", group, out, in);
    ref.bias = add(name + ".bias", group, out, 1);
    return ref;
  };

  for (int l = 0; l < cfg.trunk_layers; ++l) {
    int in = l == 0 ? cfg.position_dim : cfg.trunk_width;
    if (l > 0 && cfg.has_skip() && l == cfg.skip_layer) in += cfg.position_dim;
    layout.trunk.push_back(
        add_layer("trunk." + std::to_string(l), ParamGroup::kTrunk, cfg.trunk_width, in));
  }
  layout.density = add_layer("density", ParamGroup::kDensityHead, 1, cfg.trunk_width);
  for (SensorChannel s : kSensors) {
    const ParamGroup group = color_head_group(s);
    for (int l = 0; l < cfg.head_layers; ++l) {
      const int in = l == 0 ? cfg.trunk_width + cfg.direction_dim : cfg.head_width;
      const int out = l == cfg.head_layers - 1 ? cfg.channels_per_sensor : cfg.head_width;
      layout.heads[static_cast<size_t>(index_of(s))].push_back(
          add_layer("head_" + to_string(s) + "." + std::to_string(l), group, out, in));
    }
  }
  return layout;
}

Eigen::Map<const Eigen::MatrixXd> FieldParams::tensor(size_t index) const {
  const TensorInfo& t = layout.tensors.at(index);
  return {values.data() + t.offset, t.rows, t.cols};
}

Eigen::Map<Eigen::MatrixXd> FieldParams::tensor(size_t index) {
  const TensorInfo& t = layout.tensors.at(index);
  return {values.data() + t.offset, t.rows, t.cols};
}

std::span<const double> FieldParams::group_span(size_t index) const {
  const TensorInfo& t = layout.tensors.at(index);
  return std::span<const double>(values).subspan(t.offset, t.size());
}

bool TrainableSet::empty() const {
  for (bool g : groups)
    if (g) return false;
  return true;
}

std::vector<size_t> TrainableSet::tensor_indices(const FieldLayout& layout) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < layout.tensors.size(); ++i)
    if (contains(layout.tensors[i].group)) out.push_back(i);
  return out;
}

TrainableSet make_trainable_set(std::initializer_list<ParamGroup> groups) {
  TrainableSet set;
  for (ParamGroup g : groups) set.groups[static_cast<size_t>(g)] = true;
  return set;
}

TrainableSet select_trainable(const FieldParams&, SensorChannel mode, const TrainableSet& frozen) {
  TrainableSet set =
      make_trainable_set({ParamGroup::kTrunk, ParamGroup::kDensityHead, color_head_group(mode)});
  for (size_t g = 0; g < set.groups.size(); ++g)
    if (frozen.groups[g]) set.groups[g] = false;
  return set;
}

FieldParams init_params(const FieldConfig& cfg, std::uint64_t seed) {
  FieldParams p;
  p.config = cfg;
  p.layout = FieldLayout::build(cfg);
  p.values.assign(p.layout.total_size, 0.0);
  std::mt19937_64 rng(seed);

  auto init_layer = [&](const LayerRef& ref, bool relu_follows) {
    auto w = p.tensor(ref.weight);
    const double fan_in = static_cast<double>(w.cols());
    const double bound = std::sqrt((relu_follows ? 6.0 : 1.0) / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    // Column-major fill keeps the draw order tied to the manifest layout.
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
  };
  for (const LayerRef& ref : p.layout.trunk) init_layer(ref, true);
  init_layer(p.layout.density, false);
  p.tensor(p.layout.density.bias).setConstant(-1.0);
  for (const auto& head : p.layout.heads)
    for (size_t l = 0; l < head.size(); ++l) init_layer(head[l], l + 1 < head.size());
  return p;
}

namespace {

double softplus(double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); }
double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Zeroes gradient entries where the ReLU output was not positive.
void relu_mask(Eigen::MatrixXd& grad, const Eigen::MatrixXd& activation) {
  double* g = grad.data();
  const double* a = activation.data();
  const Eigen::Index size = grad.size();
  for (Eigen::Index i = 0; i < size; ++i) g[i] = a[i] > 0.0 ? g[i] : 0.0;
}

void check_inputs(const FieldConfig& cfg, const Eigen::MatrixXd& enc_pos,
                  const Eigen::MatrixXd& enc_dir) {
  require(enc_pos.rows() == cfg.position_dim,
          "field: encoded position has " + std::to_string(enc_pos.rows()) + " rows, expected " +
              std::to_string(cfg.position_dim));
  require(enc_dir.rows() == cfg.direction_dim,
          "field: encoded direction has " + std::to_string(enc_dir.rows()) + " rows, expected " +
              std::to_string(cfg.direction_dim));
  require(enc_dir.cols() == enc_pos.cols(), "field: position/direction batch mismatch");
}

}  // namespace

FieldBatchOutput forward_batch(const FieldParams& p, const Eigen::MatrixXd& enc_pos,
                               const Eigen::MatrixXd& enc_dir,
                               std::array<bool, kSensorCount> heads, FieldCache& cache) {
  const FieldConfig& cfg = p.config;
  check_inputs(cfg, enc_pos, enc_dir);
  const Eigen::Index n = enc_pos.cols();
  const Eigen::Index width = cfg.trunk_width;

  cache.enc_pos = enc_pos;
  cache.enc_dir = enc_dir;
  cache.trunk_out.resize(p.layout.trunk.size());
  for (size_t l = 0; l < p.layout.trunk.size(); ++l) {
    const auto w = p.tensor(p.layout.trunk[l].weight);
    const auto b = p.tensor(p.layout.trunk[l].bias);
    Eigen::MatrixXd& out = cache.trunk_out[l];
    if (l == 0) {
      out.noalias() = w * enc_pos;
    } else if (cfg.has_skip() && static_cast<int>(l) == cfg.skip_layer) {
      out.noalias() = w.leftCols(width) * cache.trunk_out[l - 1];
      out.noalias() += w.rightCols(cfg.position_dim) * enc_pos;
    } else {
      out.noalias() = w * cache.trunk_out[l - 1];
    }
    out = (out.colwise() + b.col(0)).cwiseMax(0.0);
  }
  const Eigen::MatrixXd& feature = cache.trunk_out.back();

  FieldBatchOutput result;
  {
    const auto w = p.tensor(p.layout.density.weight);
    const double b = p.tensor(p.layout.density.bias)(0, 0);
    cache.density_pre.noalias() = w * feature;
    cache.density_pre.array() += b;
    result.sigma.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) result.sigma(j) = softplus(cache.density_pre(0, j));
  }

  for (SensorChannel s : kSensors) {
    const auto si = static_cast<size_t>(index_of(s));
    cache.head_done[si] = heads[si];
    if (!heads[si]) continue;
    const auto& layers = p.layout.heads[si];
    auto& acts = cache.head_out[si];
    acts.resize(layers.size());
    for (size_t l = 0; l < layers.size(); ++l) {
      const auto w = p.tensor(layers[l].weight);
      const auto b = p.tensor(layers[l].bias);
      Eigen::MatrixXd& out = acts[l];
      if (l == 0) {
        out.noalias() = w.leftCols(width) * feature;
        if (cfg.direction_dim > 0) out.noalias() += w.rightCols(cfg.direction_dim) * enc_dir;
      } else {
        out.noalias() = w * acts[l - 1];
      }
      if (l + 1 < layers.size()) {
        out = (out.colwise() + b.col(0)).cwiseMax(0.0);
      } else {
        out = (out.colwise() + b.col(0)).unaryExpr([](double z) { return sigmoid(z); });
      }
    }
    result.color[si] = acts.back();
  }
  return result;
}

void backward_batch(const FieldParams& p, const FieldCache& cache, SensorChannel sensor,
                    const Eigen::RowVectorXd& d_sigma, const Eigen::MatrixXd& d_color,
                    std::span<double> grads, Eigen::MatrixXd* d_enc_pos,
                    Eigen::MatrixXd* d_enc_dir) {
  const FieldConfig& cfg = p.config;
  const auto si = static_cast<size_t>(index_of(sensor));
  const Eigen::Index n = cache.enc_pos.cols();
  const Eigen::Index width = cfg.trunk_width;
  require(cache.head_done[si], "field backward: forward pass did not evaluate this head");
  require(d_sigma.size() == n, "field backward: d_sigma has wrong length");
  require(d_color.rows() == cfg.channels_per_sensor && d_color.cols() == n,
          "field backward: d_color has wrong shape");
  const bool want_params = !grads.empty();
  require(!want_params || grads.size() == p.values.size(),
          "field backward: gradient buffer size mismatch");

  auto grad_tensor = [&](size_t index) {
    const TensorInfo& t = p.layout.tensors[index];
    return Eigen::Map<Eigen::MatrixXd>(grads.data() + t.offset, t.rows, t.cols);
  };
  auto accumulate = [&](const LayerRef& ref, const Eigen::MatrixXd& d_out,
                        const Eigen::MatrixXd& input, Eigen::Index col_offset) {
    if (!want_params) return;
    auto gw = grad_tensor(ref.weight);
    gw.middleCols(col_offset, input.rows()).noalias() += d_out * input.transpose();
  };
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  auto accumulate_bias = [&](const LayerRef& ref, const Eigen::MatrixXd& d_out) {
    if (!want_params) return;
    grad_tensor(ref.bias).col(0).noalias() += d_out * ones;
  };

  const Eigen::MatrixXd& feature = cache.trunk_out.back();

  // Color head, last layer first.
  const auto& layers = p.layout.heads[si];
  const auto& acts = cache.head_out[si];
  Eigen::MatrixXd d_out = d_color.cwiseProduct(
      acts.back().unaryExpr([](double c) { return c * (1.0 - c); }));
  Eigen::MatrixXd d_feature;
  for (size_t l = layers.size(); l-- > 0;) {
    const auto w = p.tensor(layers[l].weight);
    accumulate_bias(layers[l], d_out);
    if (l == 0) {
      accumulate(layers[l], d_out, feature, 0);
      d_feature.noalias() = w.leftCols(width).transpose() * d_out;
      if (cfg.direction_dim > 0) {
        accumulate(layers[l], d_out, cache.enc_dir, width);
        if (d_enc_dir) d_enc_dir->noalias() = w.rightCols(cfg.direction_dim).transpose() * d_out;
      } else if (d_enc_dir) {
        d_enc_dir->setZero(0, n);
      }
    } else {
      accumulate(layers[l], d_out, acts[l - 1], 0);
      Eigen::MatrixXd d_in;
      d_in.noalias() = w.transpose() * d_out;
      relu_mask(d_in, acts[l - 1]);
      d_out.swap(d_in);
    }
  }

  // Density head: d sigma / d z = sigmoid(z).
  {
    Eigen::RowVectorXd d_pre(n);
    for (Eigen::Index j = 0; j < n; ++j) d_pre(j) = d_sigma(j) * sigmoid(cache.density_pre(0, j));
    const auto w = p.tensor(p.layout.density.weight);
    if (want_params) {
      grad_tensor(p.layout.density.weight).noalias() += d_pre * feature.transpose();
      grad_tensor(p.layout.density.bias)(0, 0) += d_pre.sum();
    }
    d_feature.noalias() += w.transpose() * d_pre;
  }

  // Trunk.
  if (d_enc_pos) d_enc_pos->setZero(cfg.position_dim, n);
  // d_act holds the gradient at a layer's output; masking it in place by the
  // ReLU turns it into the pre-activation gradient d_z.
  Eigen::MatrixXd d_act = std::move(d_feature);
  Eigen::MatrixXd d_z;
  for (size_t l = p.layout.trunk.size(); l-- > 0;) {
    const LayerRef& ref = p.layout.trunk[l];
    const auto w = p.tensor(ref.weight);
    relu_mask(d_act, cache.trunk_out[l]);
    d_z.swap(d_act);
    accumulate_bias(ref, d_z);
    if (l == 0) {
      accumulate(ref, d_z, cache.enc_pos, 0);
      if (d_enc_pos) d_enc_pos->noalias() += w.transpose() * d_z;
    } else if (cfg.has_skip() && static_cast<int>(l) == cfg.skip_layer) {
      accumulate(ref, d_z, cache.trunk_out[l - 1], 0);
      accumulate(ref, d_z, cache.enc_pos, width);
      if (d_enc_pos) d_enc_pos->noalias() += w.rightCols(cfg.position_dim).transpose() * d_z;
      d_act.noalias() = w.leftCols(width).transpose() * d_z;
    } else {
      accumulate(ref, d_z, cache.trunk_out[l - 1], 0);
      d_act.noalias() = w.transpose() * d_z;
    }
  }
}

FieldOutput query_field(const FieldParams& p, const Eigen::VectorXd& enc_pos,
                        const Eigen::VectorXd& enc_dir, SensorChannel sensor) {
  std::array<bool, kSensorCount> heads{};
  heads[static_cast<size_t>(index_of(sensor))] = true;
  FieldCache cache;
  const FieldBatchOutput out = forward_batch(p, enc_pos, enc_dir, heads, cache);
  return {out.sigma(0), out.color[static_cast<size_t>(index_of(sensor))].col(0)};
}

FieldGradient query_field_backward(const FieldParams& p, const Eigen::VectorXd& enc_pos,
                                   const Eigen::VectorXd& enc_dir, SensorChannel sensor,
                                   double d_sigma, const Eigen::VectorXd& d_color) {
  require(d_color.size() == p.config.channels_per_sensor,
          "query_field_backward: d_color has wrong length");
  std::array<bool, kSensorCount> heads{};
  heads[static_cast<size_t>(index_of(sensor))] = true;
  FieldCache cache;
  forward_batch(p, enc_pos, enc_dir, heads, cache);
  FieldGradient g;
  g.params.assign(p.values.size(), 0.0);
  Eigen::RowVectorXd ds(1);
  ds(0) = d_sigma;
  Eigen::MatrixXd d_pos, d_dir;
  backward_batch(p, cache, sensor, ds, d_color, g.params, &d_pos, &d_dir);
  g.enc_pos = d_pos.col(0);
  g.enc_dir = d_dir.col(0);
  return g;
}

}  // namespace mbarf
