#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "multibarf/datastore.hpp"
#include "multibarf/error.hpp"
#include "test_support.hpp"

using namespace mbarf;
using mbarf::testing::tiny_dataset;
using mbarf::testing::tiny_run_config;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("multibarf_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kInvalidArgument;
}

Image random_image(int w, int h, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.1, 1.1);
  Image img(w, h, c);
  for (double& v : img.data) v = u(rng);
  return img;
}

}  // namespace

TEST_CASE("png roundtrip is exact after quantization") {
  TempDir tmp;
  for (int channels : {1, 3}) {
    const Image img = random_image(13, 7, channels, static_cast<std::uint64_t>(channels));
    const fs::path file = tmp.path / ("img" + std::to_string(channels) + ".png");
    write_png(img, file);
    const Image back = read_png(file);
    CHECK(back == quantize_8bit(img));
    for (size_t i = 0; i < img.data.size(); ++i)
      CHECK(std::abs(back.data[i] - std::clamp(img.data[i], 0.0, 1.0)) <= 0.5 / 255.0 + 1e-15);
  }
}

TEST_CASE("missing and malformed images") {
  TempDir tmp;
  CHECK(kind_of([&] { (void)read_png(tmp.path / "absent.png"); }) == ErrorKind::kIo);
  std::ofstream(tmp.path / "junk.png") << "not a png";
  const ErrorKind k = kind_of([&] { (void)read_png(tmp.path / "junk.png"); });
  CHECK((k == ErrorKind::kFormat || k == ErrorKind::kIo));
}

TEST_CASE("mask png roundtrip") {
  TempDir tmp;
  Mask m(9, 4);
  for (int i = 0; i < 36; i += 5) m.set(i % 9, i / 9, true);
  write_mask_png(m, tmp.path / "m.png");
  CHECK(read_mask_png(tmp.path / "m.png") == m);
}

TEST_CASE("depth file roundtrip and corruption") {
  TempDir tmp;
  Image d(5, 3, 1);
  for (size_t i = 0; i < d.data.size(); ++i) d.data[i] = static_cast<float>(0.37 * static_cast<double>(i) + 1.0);
  const fs::path file = tmp.path / "d.mbd";
  write_depth(d, file);
  CHECK(fs::file_size(file) == 16 + 15 * 4);
  CHECK(read_depth(file) == d);

  fs::resize_file(file, fs::file_size(file) - 4);
  CHECK(kind_of([&] { (void)read_depth(file); }) == ErrorKind::kFormat);
  std::ofstream(file, std::ios::binary) << "MBDEPTH2xxxxxxxx";
  CHECK(kind_of([&] { (void)read_depth(file); }) == ErrorKind::kFormat);
}

TEST_CASE("dataset directory roundtrip") {
  TempDir tmp;
  const SyntheticDataset ds = tiny_dataset(5, 8);
  save_dataset(ds, tmp.path);
  CHECK(fs::exists(tmp.path / "manifest.json"));
  const MultiSensorDataset back = load_dataset(tmp.path);
  CHECK(back.scene_id == ds.data.scene_id);
  CHECK(back.near == ds.data.near);
  CHECK(back.far == ds.data.far);
  for (SensorChannel s : kSensors) {
    const SensorSet& a = ds.data.sensor(s);
    const SensorSet& b = back.sensor(s);
    CHECK(a.intrinsics == b.intrinsics);
    CHECK(a.background == b.background);
    REQUIRE(a.views.size() == b.views.size());
    for (size_t i = 0; i < a.views.size(); ++i) {
      CHECK(b.views[i].name == a.views[i].name);
      CHECK(b.views[i].image == quantize_8bit(a.views[i].image));
      CHECK(b.views[i].mask == a.views[i].mask);
      CHECK(b.views[i].initial_pose == a.views[i].initial_pose);
      CHECK(b.views[i].truth_pose == a.views[i].truth_pose);
      REQUIRE(b.views[i].truth_depth.has_value());
      for (size_t k = 0; k < b.views[i].truth_depth->data.size(); ++k)
        CHECK(b.views[i].truth_depth->data[k] == static_cast<double>(static_cast<float>(a.views[i].truth_depth->data[k])));
    }
  }
}

TEST_CASE("loading a dataset with a missing image names the file") {
  TempDir tmp;
  save_dataset(tiny_dataset(3, 8), tmp.path);
  bool removed = false;
  for (const auto& entry : fs::recursive_directory_iterator(tmp.path)) {
    const std::string name = entry.path().filename().string();
    if (!removed && entry.path().extension() == ".png" && name.find("mask") == std::string::npos) {
      fs::remove(entry.path());
      removed = true;
      try {
        (void)load_dataset(tmp.path);
        FAIL("expected an error");
      } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::kIo);
        CHECK(std::string(e.what()).find(name) != std::string::npos);
      }
      break;
    }
  }
  CHECK(removed);
  CHECK(kind_of([&] { (void)load_dataset(tmp.path / "nowhere"); }) == ErrorKind::kIo);
}

TEST_CASE("run config json roundtrip") {
  RunConfig cfg = RunConfig::desk();
  cfg.train.schedule = Schedule::kSequentialFrozen;
  cfg.train.seed = 1234567890123ULL;
  cfg.sampling.background[1] = Eigen::Vector3d(0.25, 0.5, 0.75);
  const RunConfig back = run_config_from_json(to_json(cfg));
  CHECK(back.train == cfg.train);
  CHECK(back.field == cfg.field);
  CHECK(back.encoding == cfg.encoding);
  CHECK(back.sampling.samples_per_ray == cfg.sampling.samples_per_ray);
  CHECK(back.sampling.background[1] == cfg.sampling.background[1]);

  nlohmann::json j = to_json(cfg);
  j["train"]["learning_rate"] = 1.0;
  CHECK_THROWS_AS(run_config_from_json(j), Error);
  const RunConfig partial = run_config_from_json(nlohmann::json::parse(R"({"train": {"iterations": 7}})"));
  CHECK(partial.train.iterations == 7);
  CHECK(partial.train.batch_pixels == TrainConfig{}.batch_pixels);
}

TEST_CASE("pose json is twelve row-major numbers") {
  RigidTransform p;
  p.rotation = Eigen::AngleAxisd(0.3, Vec3(1, 1, 0).normalized()).toRotationMatrix();
  p.translation = Vec3(1.5, -2, 0.25);
  const nlohmann::json j = pose_to_json(p);
  REQUIRE(j.size() == 12);
  CHECK(j[7].get<double>() == -2.0);
  CHECK(j[9].get<double>() == p.rotation(2, 1));
  CHECK(pose_from_json(j, "test") == p);
  CHECK_THROWS_AS(pose_from_json(nlohmann::json::array({1, 2, 3}), "test"), Error);
}

TEST_CASE("checkpoint roundtrip is bitwise") {
  const SyntheticDataset ds = tiny_dataset(8, 8);
  const TrainState st = train(ds.data, tiny_run_config(Schedule::kAlternating, 15));
  const std::string bytes = serialize_checkpoint(st);
  CHECK(bytes.compare(0, 8, "MBARFCKP") == 0);
  const TrainState back = deserialize_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(back.params.values == st.params.values);
  CHECK(back.poses == st.poses);
  CHECK(back.field_adam == st.field_adam);
  CHECK(back.rng == st.rng);
  CHECK(back.iteration == st.iteration);
  CHECK(back.train_views == st.train_views);
  CHECK(back.validation_views == st.validation_views);
  CHECK(back.config.train == st.config.train);

  TempDir tmp;
  save_checkpoint(st, tmp.path / "c.mbck");
  CHECK(serialize_checkpoint(load_checkpoint(tmp.path / "c.mbck")) == bytes);
}

TEST_CASE("resuming from a checkpoint equals an uninterrupted run") {
  const SyntheticDataset ds = tiny_dataset(8, 8);
  const RunConfig cfg = tiny_run_config(Schedule::kAlternating, 30);
  const TrainState whole = train(ds.data, cfg);
  TrainState part = init_train_state(ds.data, cfg);
  train_until(part, ds.data, 13);
  TrainState resumed = deserialize_checkpoint(serialize_checkpoint(part));
  train_until(resumed, ds.data, 30);
  CHECK(serialize_checkpoint(resumed) == serialize_checkpoint(whole));
}

TEST_CASE("damaged checkpoints are rejected") {
  const SyntheticDataset ds = tiny_dataset(8, 8);
  const std::string bytes = serialize_checkpoint(init_train_state(ds.data, tiny_run_config()));
  CHECK(kind_of([&] { (void)deserialize_checkpoint(bytes.substr(0, bytes.size() - 8)); }) == ErrorKind::kFormat);
  CHECK(kind_of([&] { (void)deserialize_checkpoint(bytes + "x"); }) == ErrorKind::kFormat);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(kind_of([&] { (void)deserialize_checkpoint(bad_magic); }) == ErrorKind::kFormat);
  std::string bad_version = bytes;
  const std::uint32_t v = kCheckpointVersion + 1;
  std::memcpy(bad_version.data() + 8, &v, sizeof v);
  CHECK(kind_of([&] { (void)deserialize_checkpoint(bad_version); }) == ErrorKind::kVersionMismatch);
  CHECK(kind_of([&] { (void)load_checkpoint("/nonexistent/dir/c.mbck"); }) == ErrorKind::kIo);
}
