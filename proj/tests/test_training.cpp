#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "multibarf/error.hpp"
#include "multibarf/training.hpp"
#include "test_support.hpp"

using namespace mbarf;
using mbarf::testing::tiny_dataset;
using mbarf::testing::tiny_run_config;

TEST_CASE("validation split floors the fraction") {
  for (auto [count, expect] : {std::pair<size_t, size_t>{16, 2}, {22, 2}, {27, 3}, {12, 1}, {7, 0}}) {
    const DatasetSplit s = split_dataset(count, 0.13, 5);
    CHECK(s.validation.size() == expect);
    CHECK(s.train.size() == count - expect);
    std::set<int> all(s.train.begin(), s.train.end());
    all.insert(s.validation.begin(), s.validation.end());
    CHECK(all.size() == count);
    CHECK(*all.rbegin() == static_cast<int>(count) - 1);
    CHECK(std::is_sorted(s.train.begin(), s.train.end()));
  }
  CHECK(split_dataset(300, 0.13, 1).validation.size() == 39);
}

TEST_CASE("validation split is seeded") {
  CHECK(split_dataset(27, 0.13, 9).validation == split_dataset(27, 0.13, 9).validation);
  bool differs = false;
  for (std::uint64_t seed = 1; seed < 20 && !differs; ++seed)
    differs = split_dataset(27, 0.13, seed).validation != split_dataset(27, 0.13, 0).validation;
  CHECK(differs);
  CHECK_THROWS_AS(split_dataset(0, 0.13, 1), Error);
  CHECK_THROWS_AS(split_dataset(10, 1.0, 1), Error);
}

TEST_CASE("learning rate decays geometrically") {
  CHECK(lr_at(0, 100, 1e-3, 1e-4) == doctest::Approx(1e-3));
  CHECK(lr_at(50, 100, 1e-3, 1e-4) == doctest::Approx(3.16227766e-4).epsilon(1e-8));
  CHECK(lr_at(100, 100, 1e-3, 1e-4) == doctest::Approx(1e-4));
  CHECK(lr_at(25, 100, 2.0, 2.0) == 2.0);
}

TEST_CASE("alpha ramps linearly between the ramp fractions") {
  CHECK(alpha_at(0, 100, 0.2, 0.7, 6) == 0.0);
  CHECK(alpha_at(19, 100, 0.2, 0.7, 6) == 0.0);
  CHECK(alpha_at(45, 100, 0.2, 0.7, 6) == doctest::Approx(3.0));
  CHECK(alpha_at(70, 100, 0.2, 0.7, 6) == 6.0);
  CHECK(alpha_at(99, 100, 0.2, 0.7, 6) == 6.0);
}

TEST_CASE("alternating schedule alternates strictly") {
  TrainConfig cfg;
  cfg.iterations = 1000;
  cfg.schedule = Schedule::kAlternating;
  for (long i = 0; i < cfg.iterations; ++i) {
    const StepPlan p = mode_for_iteration(cfg, i);
    CHECK(p.sensor == (i % 2 == 0 ? SensorChannel::kA : SensorChannel::kB));
    CHECK(p.frozen.empty());
    if (i > 0) CHECK(p.sensor != mode_for_iteration(cfg, i - 1).sensor);
  }
}

TEST_CASE("sequential schedules run two phases") {
  TrainConfig cfg;
  cfg.iterations = 50;
  cfg.schedule = Schedule::kSequentialFrozen;
  CHECK(total_iterations(cfg) == 100);
  const StepPlan first = mode_for_iteration(cfg, 49);
  CHECK(first.sensor == SensorChannel::kA);
  CHECK(first.frozen.empty());
  const StepPlan second = mode_for_iteration(cfg, 50);
  CHECK(second.sensor == SensorChannel::kB);
  CHECK(second.phase_iteration == 0);
  CHECK(second.frozen == make_trainable_set({ParamGroup::kTrunk, ParamGroup::kDensityHead, ParamGroup::kColorHeadA}));
  cfg.schedule = Schedule::kSequential;
  CHECK(mode_for_iteration(cfg, 70).frozen.empty());
  CHECK(mode_for_iteration(cfg, 70).sensor == SensorChannel::kB);
  cfg.schedule = Schedule::kSingleB;
  CHECK(total_iterations(cfg) == 50);
  CHECK(mode_for_iteration(cfg, 0).sensor == SensorChannel::kB);
}

TEST_CASE("state alpha is the value after the last completed step") {
  TrainState st;
  st.config.encoding.position_bands = 4;
  st.config.train.iterations = 10;
  st.config.train.schedule = Schedule::kSequential;
  auto at = [&](long it) {
    st.iteration = it;
    return st.current_alpha();
  };
  CHECK(at(0) == 0.0);
  CHECK(at(10) == 4.0);  // end of the first phase, not the second phase's start
  CHECK(at(11) == 0.0);
  CHECK(at(15) == doctest::Approx(alpha_at(5, 10, 0.2, 0.7, 4)));
  CHECK(at(20) == 4.0);
  st.config.train.schedule = Schedule::kAlternating;
  CHECK(at(6) == doctest::Approx(alpha_at(6, 10, 0.2, 0.7, 4)));
  CHECK(at(10) == 4.0);
}

TEST_CASE("schedule names") {
  for (Schedule s : {Schedule::kAlternating, Schedule::kSequential, Schedule::kSequentialFrozen,
                     Schedule::kSingleA, Schedule::kSingleB})
    CHECK(schedule_from_string(to_string(s)) == s);
  CHECK(schedule_from_string("sequential_frozen") == Schedule::kSequentialFrozen);
  CHECK_THROWS_AS(schedule_from_string("interleaved"), Error);
}

TEST_CASE("adam first step by hand") {
  TrainConfig cfg;
  AdamSlot slot{std::vector<double>(2, 0.0), std::vector<double>(2, 0.0), 0};
  std::vector<double> x = {1.0, -2.0};
  const std::vector<double> g = {0.5, -4.0};
  adam_update(x, g, slot, 0.1, cfg);
  // Bias correction makes the first step lr * g / (|g| + eps).
  CHECK(x[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(x[1] == doctest::Approx(-2.0 + 0.1 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
  CHECK(slot.steps == 1);
  CHECK(slot.m[0] == doctest::Approx(0.05));
  CHECK(slot.v[1] == doctest::Approx(0.016));

  // Second step with the same gradient, from the recurrences.
  adam_update(x, g, slot, 0.1, cfg);
  const double m = 0.9 * 0.05 + 0.1 * 0.5, v = 0.999 * 0.00025 + 0.001 * 0.25;
  const double step = 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(x[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - step).epsilon(1e-14));
}

TEST_CASE("photometric loss is a mean over pixels and channels") {
  Eigen::MatrixXd a(3, 2), b(3, 2);
  a << 0, 1, 0, 1, 0, 1;
  b.setZero();
  CHECK(photometric_loss(a, b) == doctest::Approx(0.5));
  CHECK_THROWS_AS(photometric_loss(a, Eigen::MatrixXd::Zero(2, 2)), Error);
}

TEST_CASE("masked pixels are never sampled") {
  SyntheticDataset ds = tiny_dataset(4, 8);
  MultiSensorDataset& data = ds.data;
  for (View& v : data.sensor(SensorChannel::kA).views) {
    v.mask = Mask(8, 8);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) v.mask.set(x, y, (x + 2 * y) % 3 == 0);
  }
  const std::vector<int> views = {0, 1, 2, 3};
  const PixelPool pool(data, SensorChannel::kA, views);
  std::mt19937_64 rng(99);
  std::set<std::tuple<int, int, int>> seen;
  long draws = 0;
  while (draws < 1000000) {
    const PixelBatch b = pool.sample(data, 4096, rng);
    REQUIRE(b.entries.size() == 4096);
    for (const PixelEntry& e : b.entries) {
      REQUIRE_FALSE(data.sensor(SensorChannel::kA).views[static_cast<size_t>(e.view)].mask.at(e.x, e.y));
      seen.insert({e.view, e.x, e.y});
    }
    draws += 4096;
  }
  CHECK(seen.size() == pool.size());
}

TEST_CASE("fully masked sensor raises an empty-domain error") {
  SyntheticDataset ds = tiny_dataset(4, 8);
  for (View& v : ds.data.sensor(SensorChannel::kB).views) {
    v.mask = Mask(8, 8);
    for (int i = 0; i < 64; ++i) v.mask.set(i % 8, i / 8, true);
  }
  std::mt19937_64 rng(1);
  try {
    (void)sample_batch(ds.data, SensorChannel::kB, {0, 1}, 8, rng);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kEmptyDomain);
  }
}

TEST_CASE("configured batch size is used exactly") {
  const SyntheticDataset ds = tiny_dataset(4, 8);
  RunConfig cfg = tiny_run_config();
  cfg.train.batch_pixels = 4096;
  TrainState st = init_train_state(ds.data, cfg);
  const Trainer trainer(ds.data, st);
  const PixelBatch b = trainer.pool(SensorChannel::kA).sample(ds.data, cfg.train.batch_pixels, st.rng);
  CHECK(b.entries.size() == 4096);
}

TEST_CASE("training state splits every sensor and starts at zero twists") {
  const SyntheticDataset ds = tiny_dataset(16, 8);
  const TrainState st = init_train_state(ds.data, tiny_run_config());
  for (SensorChannel s : kSensors) {
    const auto si = static_cast<size_t>(index_of(s));
    CHECK(st.validation_views[si].size() == 2);
    CHECK(st.train_views[si].size() == 14);
    CHECK(st.poses[si].size() == 14);
    for (const PoseSlot& p : st.poses[si]) CHECK(p.twist == Twist{});
    CHECK(st.pose(ds.data, s, 0) == ds.data.sensor(s).views[static_cast<size_t>(st.train_views[si][0])].initial_pose);
  }
}

TEST_CASE("a step only moves the active sensor's head and twists") {
  const SyntheticDataset ds = tiny_dataset(8, 8);
  TrainState st = init_train_state(ds.data, tiny_run_config());
  Trainer trainer(ds.data, st);
  for (int i = 0; i < 20; ++i) {
    const TrainState before = st;
    const StepResult r = trainer.step();
    const SensorChannel idle = other(r.plan.sensor);
    for (const TensorInfo& t : st.params.layout.tensors) {
      if (t.group != color_head_group(idle)) continue;
      for (size_t k = 0; k < t.size(); ++k) REQUIRE(st.params.values[t.offset + k] == before.params.values[t.offset + k]);
    }
    CHECK(st.poses[static_cast<size_t>(index_of(idle))] == before.poses[static_cast<size_t>(index_of(idle))]);
    CHECK_FALSE(st.params.values == before.params.values);
  }
}

TEST_CASE("same seed gives identical training") {
  const SyntheticDataset ds = tiny_dataset(8, 8);
  const TrainState a = train(ds.data, tiny_run_config());
  const TrainState b = train(ds.data, tiny_run_config());
  CHECK(a.params.values == b.params.values);
  CHECK(a.poses == b.poses);
  RunConfig other_seed = tiny_run_config();
  other_seed.train.seed = 18;
  CHECK_FALSE(train(ds.data, other_seed).params.values == a.params.values);
}

TEST_CASE("train_until resumes to the same state") {
  const SyntheticDataset ds = tiny_dataset(8, 8);
  const RunConfig cfg = tiny_run_config();
  TrainState whole = init_train_state(ds.data, cfg);
  train_until(whole, ds.data, 40);
  TrainState split = init_train_state(ds.data, cfg);
  train_until(split, ds.data, 17);
  train_until(split, ds.data, 40);
  CHECK(whole.params.values == split.params.values);
  CHECK(whole.poses == split.poses);
  CHECK(whole.rng == split.rng);
  train_until(split, ds.data, 1000);
  CHECK(split.iteration == 40);
}

TEST_CASE("training logs at the configured interval") {
  const SyntheticDataset ds = tiny_dataset(8, 8);
  std::vector<LogRecord> logs;
  TrainHooks hooks;
  hooks.on_log = [&](const LogRecord& r) { logs.push_back(r); };
  (void)train(ds.data, tiny_run_config(), hooks);
  REQUIRE(logs.size() >= 4);
  CHECK(logs[0].iteration == 10);
  CHECK(to_json_line(logs[0]).find("\"iteration\":10") != std::string::npos);
}

TEST_CASE("non-finite loss raises a divergence error") {
  const SyntheticDataset ds = tiny_dataset(8, 8);
  TrainState st = init_train_state(ds.data, tiny_run_config());
  st.params.values[0] = std::numeric_limits<double>::quiet_NaN();
  bool saved = false;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const TrainState&) { saved = true; };
  CHECK_THROWS_AS(train_until(st, ds.data, 5, hooks), DivergedError);
  CHECK(saved);
}

TEST_CASE("single-sensor schedules need images of that sensor") {
  SyntheticDataset ds = tiny_dataset(8, 8);
  ds.data.sensor(SensorChannel::kB).views.clear();
  CHECK_THROWS_AS(train(ds.data, tiny_run_config(Schedule::kAlternating)), Error);
  CHECK_NOTHROW(train(ds.data, tiny_run_config(Schedule::kSingleA, 4)));
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.batch_pixels = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.alpha_ramp_start = 0.8;
  cfg.alpha_ramp_end = 0.3;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
