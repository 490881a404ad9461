#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "multibarf/error.hpp"
#include "multibarf/field.hpp"

using namespace mbarf;

namespace {

FieldConfig tiny_config() {
  FieldConfig cfg;
  cfg.trunk_layers = 3;
  cfg.trunk_width = 5;
  cfg.skip_layer = 2;
  cfg.head_layers = 2;
  cfg.head_width = 4;
  cfg.channels_per_sensor = 3;
  cfg.position_dim = 6;
  cfg.direction_dim = 3;
  return cfg;
}

// Plain-loop evaluation of the network straight from the tensor manifest.
struct Reference {
  const FieldParams& p;

  std::vector<double> dense(const LayerRef& ref, const std::vector<double>& in, bool relu) const {
    const auto w = p.tensor(ref.weight);
    const auto b = p.tensor(ref.bias);
    std::vector<double> out(static_cast<size_t>(w.rows()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      double z = b(r, 0);
      for (Eigen::Index c = 0; c < w.cols(); ++c) z += w(r, c) * in[static_cast<size_t>(c)];
      out[static_cast<size_t>(r)] = relu ? std::max(z, 0.0) : z;
    }
    return out;
  }

  FieldOutput eval(const std::vector<double>& pos, const std::vector<double>& dir,
                   SensorChannel s) const {
    std::vector<double> h = pos;
    for (size_t l = 0; l < p.layout.trunk.size(); ++l) {
      if (l > 0 && p.config.has_skip() && static_cast<int>(l) == p.config.skip_layer)
        h.insert(h.end(), pos.begin(), pos.end());
      h = dense(p.layout.trunk[l], h, true);
    }
    FieldOutput out;
    const double z = dense(p.layout.density, h, false)[0];
    out.sigma = std::log(1.0 + std::exp(z));
    std::vector<double> c = h;
    c.insert(c.end(), dir.begin(), dir.end());
    const auto& head = p.layout.heads[static_cast<size_t>(index_of(s))];
    for (size_t l = 0; l < head.size(); ++l) c = dense(head[l], c, l + 1 < head.size());
    out.color.resize(static_cast<Eigen::Index>(c.size()));
    for (size_t i = 0; i < c.size(); ++i) out.color(static_cast<Eigen::Index>(i)) = 1.0 / (1.0 + std::exp(-c[i]));
    return out;
  }
};

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

TEST_CASE("layout sizes and groups") {
  const FieldConfig cfg = tiny_config();
  const FieldLayout layout = FieldLayout::build(cfg);
  // trunk: 5x6+5, 5x(5+6)+5, 5x5+5; density 1x5+1; heads 2 x (4x8+4 + 3x4+3)
  const size_t expected = (30 + 5) + (55 + 5) + (25 + 5) + (5 + 1) + 2 * ((32 + 4) + (12 + 3));
  CHECK(layout.total_size == expected);
  size_t offset = 0;
  for (const TensorInfo& t : layout.tensors) {
    CHECK(t.offset == offset);
    offset += t.size();
  }
  CHECK(layout.tensors[layout.density.weight].group == ParamGroup::kDensityHead);
  CHECK(layout.tensors[layout.heads[1][0].weight].group == ParamGroup::kColorHeadB);
}

TEST_CASE("forward pass agrees with a hand-rolled evaluation") {
  std::mt19937_64 rng(11);
  FieldParams p = init_params(tiny_config(), 3);
  // Push biases away from zero so every nonlinearity branch is exercised.
  for (double& v : p.values) v += 0.05;
  const Reference ref{p};
  const Eigen::MatrixXd pos = random_matrix(6, 9, rng);
  const Eigen::MatrixXd dir = random_matrix(3, 9, rng);
  FieldCache cache;
  const FieldBatchOutput out = forward_batch(p, pos, dir, {true, true}, cache);
  for (Eigen::Index j = 0; j < pos.cols(); ++j)
    for (SensorChannel s : kSensors) {
      const FieldOutput r = ref.eval(to_std(pos.col(j)), to_std(dir.col(j)), s);
      CHECK(out.sigma(j) == doctest::Approx(r.sigma).epsilon(1e-13));
      CHECK((out.color[static_cast<size_t>(index_of(s))].col(j) - r.color).cwiseAbs().maxCoeff() < 1e-13);
      const FieldOutput q = query_field(p, pos.col(j), dir.col(j), s);
      CHECK(q.sigma == out.sigma(j));
    }
}

TEST_CASE("initialization is seeded") {
  const FieldConfig cfg = tiny_config();
  CHECK(init_params(cfg, 5) == init_params(cfg, 5));
  CHECK_FALSE(init_params(cfg, 5) == init_params(cfg, 6));
}

TEST_CASE("backward pass matches central differences") {
  std::mt19937_64 rng(12);
  FieldParams p = init_params(tiny_config(), 4);
  const Eigen::MatrixXd pos = random_matrix(6, 4, rng);
  const Eigen::MatrixXd dir = random_matrix(3, 4, rng);
  const Eigen::RowVectorXd ws = random_matrix(1, 4, rng);
  const Eigen::MatrixXd wc = random_matrix(3, 4, rng);

  for (SensorChannel s : kSensors) {
    const auto si = static_cast<size_t>(index_of(s));
    auto objective = [&](const FieldParams& q, const Eigen::MatrixXd& ep, const Eigen::MatrixXd& ed) {
      FieldCache c;
      std::array<bool, kSensorCount> heads{};
      heads[si] = true;
      const FieldBatchOutput o = forward_batch(q, ep, ed, heads, c);
      return ws.cwiseProduct(o.sigma).sum() + wc.cwiseProduct(o.color[si]).sum();
    };
    FieldCache cache;
    std::array<bool, kSensorCount> heads{};
    heads[si] = true;
    forward_batch(p, pos, dir, heads, cache);
    std::vector<double> grads(p.values.size(), 0.0);
    Eigen::MatrixXd d_pos, d_dir;
    backward_batch(p, cache, s, ws, wc, grads, &d_pos, &d_dir);

    const double h = 1e-6;
    for (size_t i = 0; i < p.values.size(); ++i) {
      FieldParams plus = p, minus = p;
      plus.values[i] += h;
      minus.values[i] -= h;
      const double fd = (objective(plus, pos, dir) - objective(minus, pos, dir)) / (2 * h);
      CHECK(grads[i] == doctest::Approx(fd).epsilon(1e-6).scale(1e-3));
    }
    for (Eigen::Index i = 0; i < pos.size(); ++i) {
      Eigen::MatrixXd a = pos, b = pos;
      a.data()[i] += h;
      b.data()[i] -= h;
      const double fd = (objective(p, a, dir) - objective(p, b, dir)) / (2 * h);
      CHECK(d_pos.data()[i] == doctest::Approx(fd).epsilon(1e-6).scale(1e-3));
    }
    for (Eigen::Index i = 0; i < dir.size(); ++i) {
      Eigen::MatrixXd a = dir, b = dir;
      a.data()[i] += h;
      b.data()[i] -= h;
      const double fd = (objective(p, pos, a) - objective(p, pos, b)) / (2 * h);
      CHECK(d_dir.data()[i] == doctest::Approx(fd).epsilon(1e-6).scale(1e-3));
    }
  }
}

TEST_CASE("a sensor's backward pass never touches the other head") {
  std::mt19937_64 rng(13);
  const FieldParams p = init_params(tiny_config(), 5);
  const Eigen::MatrixXd pos = random_matrix(6, 7, rng);
  const Eigen::MatrixXd dir = random_matrix(3, 7, rng);
  for (SensorChannel s : kSensors) {
    FieldCache cache;
    forward_batch(p, pos, dir, {true, true}, cache);
    std::vector<double> grads(p.values.size(), 0.0);
    backward_batch(p, cache, s, random_matrix(1, 7, rng), random_matrix(3, 7, rng), grads,
                   nullptr, nullptr);
    for (const TensorInfo& t : p.layout.tensors) {
      if (t.group != color_head_group(other(s))) continue;
      for (size_t i = 0; i < t.size(); ++i) CHECK(grads[t.offset + i] == 0.0);
    }
  }
}

TEST_CASE("density ignores the color heads") {
  std::mt19937_64 rng(14);
  FieldParams p = init_params(tiny_config(), 6);
  const Eigen::MatrixXd pos = random_matrix(6, 5, rng);
  const Eigen::MatrixXd dir = random_matrix(3, 5, rng);
  FieldCache cache;
  const FieldBatchOutput before = forward_batch(p, pos, dir, {true, false}, cache);
  for (const TensorInfo& t : p.layout.tensors)
    if (t.group == ParamGroup::kColorHeadB)
      for (size_t i = 0; i < t.size(); ++i) p.values[t.offset + i] *= -3.0;
  const FieldBatchOutput a_only = forward_batch(p, pos, dir, {true, false}, cache);
  const FieldBatchOutput b_only = forward_batch(p, pos, dir, {false, true}, cache);
  CHECK(a_only.sigma == before.sigma);
  CHECK(b_only.sigma == before.sigma);
  CHECK(a_only.color[0] == before.color[0]);
}

TEST_CASE("trainable groups per mode") {
  const FieldParams p = init_params(tiny_config(), 1);
  const TrainableSet a = select_trainable(p, SensorChannel::kA);
  CHECK(a.contains(ParamGroup::kTrunk));
  CHECK(a.contains(ParamGroup::kDensityHead));
  CHECK(a.contains(ParamGroup::kColorHeadA));
  CHECK_FALSE(a.contains(ParamGroup::kColorHeadB));
  const TrainableSet frozen = make_trainable_set({ParamGroup::kTrunk, ParamGroup::kDensityHead});
  const TrainableSet b = select_trainable(p, SensorChannel::kB, frozen);
  CHECK(b == make_trainable_set({ParamGroup::kColorHeadB}));
}

TEST_CASE("field config validation") {
  FieldConfig cfg = tiny_config();
  cfg.trunk_width = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.head_layers = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
