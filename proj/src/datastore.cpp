#include "multibarf/datastore.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "multibarf/error.hpp"

namespace mbarf {

namespace {

using nlohmann::json;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorKind::kIo, "cannot open '" + path.string() + "'");
  return f;
}

std::uint8_t to_level(double v) {
  if (!(v > 0.0)) return 0;  // also maps NaN to 0
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

void write_png_bytes(const std::vector<std::uint8_t>& bytes, int width, int height, int channels,
                     const fs::path& path) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(ErrorKind::kIo, "libpng init failed for '" + path.string() + "'");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::kIo, "failed writing PNG '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const size_t stride = static_cast<size_t>(width) * static_cast<size_t>(channels);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<size_t>(y) * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct PngData {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> bytes;
};

PngData read_png_bytes(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::kIo, "missing file '" + path.string() + "'");
  FilePtr f = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    fail(ErrorKind::kFormat, "'" + path.string() + "' is not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(ErrorKind::kIo, "libpng init failed for '" + path.string() + "'");
  png_infop info = png_create_info_struct(png);
  PngData out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kFormat, "corrupt PNG '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  const size_t stride = png_get_rowbytes(png, info);
  out.bytes.resize(stride * static_cast<size_t>(out.height));
  std::vector<png_bytep> rows(static_cast<size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[static_cast<size_t>(y)] = out.bytes.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

std::string read_all(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::kIo, "missing file '" + path.string() + "'");
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_all(const std::string& bytes, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "failed writing '" + path.string() + "'");
}

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, size_t& pos, const std::string& source) {
  if (pos + sizeof(T) > in.size()) fail(ErrorKind::kFormat, source + ": truncated file");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

void write_png(const Image& image, const fs::path& path) {
  require(image.channels == 1 || image.channels == 3, "write_png: need 1 or 3 channels");
  std::vector<std::uint8_t> bytes(image.data.size());
  for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_level(image.data[i]);
  write_png_bytes(bytes, image.width, image.height, image.channels, path);
}

Image read_png(const fs::path& path) {
  const PngData d = read_png_bytes(path);
  Image img(d.width, d.height, d.channels);
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = d.bytes[i] / 255.0;
  return img;
}

Image quantize_8bit(const Image& image) {
  Image q = image;
  for (double& v : q.data) v = to_level(v) / 255.0;
  return q;
}

void write_mask_png(const Mask& mask, const fs::path& path) {
  std::vector<std::uint8_t> bytes(mask.excluded.size());
  for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.excluded[i] ? 255 : 0;
  write_png_bytes(bytes, mask.width, mask.height, 1, path);
}

Mask read_mask_png(const fs::path& path) {
  const PngData d = read_png_bytes(path);
  if (d.channels != 1) fail(ErrorKind::kFormat, "mask '" + path.string() + "' must be grayscale");
  Mask m(d.width, d.height);
  for (size_t i = 0; i < m.excluded.size(); ++i) m.excluded[i] = d.bytes[i] >= 128;
  return m;
}

void write_depth(const Image& depth, const fs::path& path) {
  require(depth.channels == 1, "write_depth: depth maps have one channel");
  std::string out(kDepthMagic.begin(), kDepthMagic.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(depth.width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(depth.height));
  for (double v : depth.data) put<float>(out, static_cast<float>(v));
  write_all(out, path);
}

Image read_depth(const fs::path& path) {
  const std::string in = read_all(path);
  const std::string source = "depth file '" + path.string() + "'";
  if (in.size() < 16 || std::memcmp(in.data(), kDepthMagic.data(), kDepthMagic.size()) != 0)
    fail(ErrorKind::kFormat, source + ": bad magic");
  size_t pos = 8;
  const auto w = take<std::uint32_t>(in, pos, source);
  const auto h = take<std::uint32_t>(in, pos, source);
  const size_t count = static_cast<size_t>(w) * h;
  if (in.size() != 16 + 4 * count)
    fail(ErrorKind::kFormat, source + ": length does not match " + std::to_string(w) + "x" +
                                 std::to_string(h));
  Image img(static_cast<int>(w), static_cast<int>(h), 1);
  for (size_t i = 0; i < count; ++i) img.data[i] = take<float>(in, pos, source);
  return img;
}

json pose_to_json(const RigidTransform& pose) {
  json a = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) a.push_back(pose.rotation(r, c));
    a.push_back(pose.translation(r));
  }
  return a;
}

RigidTransform pose_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 12)
    fail(ErrorKind::kFormat, where + ": pose must be 12 numbers (3x4 row-major)");
  RigidTransform p;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = j[static_cast<size_t>(4 * r + c)].get<double>();
    p.translation(r) = j[static_cast<size_t>(4 * r + 3)].get<double>();
  }
  return p;
}

namespace {

json intrinsics_json(const Intrinsics& k) {
  return {{"width", k.width}, {"height", k.height}, {"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}};
}

Intrinsics intrinsics_from_json(const json& j) {
  Intrinsics k;
  k.width = j.at("width").get<int>();
  k.height = j.at("height").get<int>();
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  return k;
}

std::vector<double> vec_of(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd eigen_of(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json build_manifest(const MultiSensorDataset& data, const fs::path& dir) {
  json m;
  m["format"] = "multibarf-dataset";
  m["version"] = 1;
  m["scene_id"] = data.scene_id;
  m["near"] = data.near;
  m["far"] = data.far;
  m["sensors"] = json::array();
  m["images"] = json::array();
  for (SensorChannel s : kSensors) {
    const SensorSet& set = data.sensor(s);
    const std::string tag = to_string(s);
    m["sensors"].push_back({{"name", tag},
                            {"intrinsics", intrinsics_json(set.intrinsics)},
                            {"background", vec_of(set.background)}});
    fs::create_directories(dir / tag);
    for (size_t i = 0; i < set.views.size(); ++i) {
      const View& v = set.views[i];
      char stem[32];
      std::snprintf(stem, sizeof(stem), "%03zu", i);
      const std::string base = tag + "/" + stem;
      json rec;
      rec["name"] = v.name;
      rec["sensor"] = tag;
      rec["file"] = base + ".png";
      write_png(v.image, dir / (base + ".png"));
      rec["initial_pose"] = pose_to_json(v.initial_pose);
      if (!v.mask.empty()) {
        rec["mask"] = base + "_mask.png";
        write_mask_png(v.mask, dir / (base + "_mask.png"));
      }
      if (v.truth_pose) rec["truth_pose"] = pose_to_json(*v.truth_pose);
      if (v.truth_depth) {
        rec["truth_depth"] = base + "_depth.mbd";
        write_depth(*v.truth_depth, dir / (base + "_depth.mbd"));
      }
      m["images"].push_back(rec);
    }
  }
  return m;
}

}  // namespace

void save_dataset(const MultiSensorDataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  write_all(build_manifest(data, dir).dump(2) + "\n", dir / "manifest.json");
}

void save_dataset(const SyntheticDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  json m = build_manifest(ds.data, dir);
  json syn;
  syn["preset"] = ds.scene.preset;
  syn["scene_seed"] = ds.scene.seed;
  syn["seed"] = ds.seed;
  for (SensorChannel s : kSensors) {
    const auto si = static_cast<size_t>(index_of(s));
    syn["injected_rotation_deg_" + to_string(s)] = ds.injected_rotation_deg[si];
    syn["injected_translation_" + to_string(s)] = ds.injected_translation[si];
  }
  m["synthetic"] = syn;
  write_all(m.dump(2) + "\n", dir / "manifest.json");
}

MultiSensorDataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  json m;
  try {
    m = json::parse(read_all(manifest_path));
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, "malformed manifest '" + manifest_path.string() + "': " + e.what());
  }
  MultiSensorDataset data;
  try {
    if (m.value("format", "") != "multibarf-dataset")
      fail(ErrorKind::kFormat, "manifest '" + manifest_path.string() + "': unknown format");
    if (m.at("version").get<int>() != 1)
      fail(ErrorKind::kVersionMismatch, "manifest '" + manifest_path.string() + "': unsupported version");
    data.scene_id = m.at("scene_id").get<std::string>();
    data.near = m.at("near").get<double>();
    data.far = m.at("far").get<double>();
    for (const json& sj : m.at("sensors")) {
      SensorSet& set = data.sensor(sensor_from_string(sj.at("name").get<std::string>()));
      set.intrinsics = intrinsics_from_json(sj.at("intrinsics"));
      set.background = eigen_of(sj.at("background").get<std::vector<double>>());
    }
    const json& images = m.at("images");
    for (size_t i = 0; i < images.size(); ++i) {
      const json& rec = images[i];
      const std::string file = rec.at("file").get<std::string>();
      const std::string where = "manifest record " + std::to_string(i) + " ('" + file + "')";
      View v;
      v.name = rec.value("name", file);
      v.image = read_png(dir / file);
      v.initial_pose = pose_from_json(rec.at("initial_pose"), where);
      if (rec.contains("mask")) v.mask = read_mask_png(dir / rec.at("mask").get<std::string>());
      if (rec.contains("truth_pose")) v.truth_pose = pose_from_json(rec.at("truth_pose"), where);
      if (rec.contains("truth_depth"))
        v.truth_depth = read_depth(dir / rec.at("truth_depth").get<std::string>());
      data.sensor(sensor_from_string(rec.at("sensor").get<std::string>())).views.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, "malformed manifest '" + manifest_path.string() + "': " + e.what());
  }
  data.validate();
  return data;
}

// ---- run configuration ----------------------------------------------------

namespace {

json sampling_json(const SamplingConfig& s) {
  json bg = json::array();
  for (const auto& b : s.background) bg.push_back(vec_of(b));
  return {{"samples_per_ray", s.samples_per_ray},
          {"stratified", s.stratified},
          {"background", bg},
          {"seed", s.seed}};
}

// Copies known keys of `j` into `target`, rejecting anything unexpected.
class Reader {
 public:
  Reader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) fail(ErrorKind::kFormat, "config: '" + section_ + "' must be an object");
  }
  template <typename T>
  void operator()(const char* key, T& target) {
    seen_.push_back(key);
    if (!j_.contains(key)) return;
    try {
      target = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorKind::kFormat, "config: bad value for '" + section_ + "." + key + "'");
    }
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        fail(ErrorKind::kFormat, "config: unknown key '" + section_ + "." + it.key() + "'");
  }

 private:
  const json& j_;
  std::string section_;
  std::vector<std::string> seen_;
};

}  // namespace

json to_json(const RunConfig& c) {
  json j;
  const TrainConfig& t = c.train;
  j["train"] = {{"iterations", t.iterations},
                {"batch_pixels", t.batch_pixels},
                {"lr_field_start", t.lr_field_start},
                {"lr_field_end", t.lr_field_end},
                {"lr_pose_start", t.lr_pose_start},
                {"lr_pose_end", t.lr_pose_end},
                {"alpha_ramp_start", t.alpha_ramp_start},
                {"alpha_ramp_end", t.alpha_ramp_end},
                {"schedule", to_string(t.schedule)},
                {"validation_fraction", t.validation_fraction},
                {"seed", t.seed},
                {"adam_beta1", t.adam_beta1},
                {"adam_beta2", t.adam_beta2},
                {"adam_epsilon", t.adam_epsilon},
                {"log_interval", t.log_interval},
                {"validation_interval", t.validation_interval},
                {"checkpoint_interval", t.checkpoint_interval}};
  const FieldConfig& f = c.field;
  j["field"] = {{"trunk_layers", f.trunk_layers},       {"trunk_width", f.trunk_width},
                {"skip_layer", f.skip_layer},           {"head_layers", f.head_layers},
                {"head_width", f.head_width},           {"channels_per_sensor", f.channels_per_sensor}};
  j["encoding"] = {{"position_bands", c.encoding.position_bands},
                   {"direction_bands", c.encoding.direction_bands},
                   {"include_raw", c.encoding.include_raw}};
  j["sampling"] = sampling_json(c.sampling);
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Reader top(j, "config");
  json train = json::object(), field = json::object(), encoding = json::object(),
       sampling = json::object();
  top("train", train);
  top("field", field);
  top("encoding", encoding);
  top("sampling", sampling);
  top.finish();

  Reader t(train, "train");
  std::string schedule = to_string(c.train.schedule);
  t("iterations", c.train.iterations);
  t("batch_pixels", c.train.batch_pixels);
  t("lr_field_start", c.train.lr_field_start);
  t("lr_field_end", c.train.lr_field_end);
  t("lr_pose_start", c.train.lr_pose_start);
  t("lr_pose_end", c.train.lr_pose_end);
  t("alpha_ramp_start", c.train.alpha_ramp_start);
  t("alpha_ramp_end", c.train.alpha_ramp_end);
  t("schedule", schedule);
  t("validation_fraction", c.train.validation_fraction);
  t("seed", c.train.seed);
  t("adam_beta1", c.train.adam_beta1);
  t("adam_beta2", c.train.adam_beta2);
  t("adam_epsilon", c.train.adam_epsilon);
  t("log_interval", c.train.log_interval);
  t("validation_interval", c.train.validation_interval);
  t("checkpoint_interval", c.train.checkpoint_interval);
  t.finish();
  c.train.schedule = schedule_from_string(schedule);

  Reader f(field, "field");
  f("trunk_layers", c.field.trunk_layers);
  f("trunk_width", c.field.trunk_width);
  f("skip_layer", c.field.skip_layer);
  f("head_layers", c.field.head_layers);
  f("head_width", c.field.head_width);
  f("channels_per_sensor", c.field.channels_per_sensor);
  f.finish();

  Reader e(encoding, "encoding");
  e("position_bands", c.encoding.position_bands);
  e("direction_bands", c.encoding.direction_bands);
  e("include_raw", c.encoding.include_raw);
  e.finish();

  Reader s(sampling, "sampling");
  std::vector<std::vector<double>> background;
  s("samples_per_ray", c.sampling.samples_per_ray);
  s("stratified", c.sampling.stratified);
  s("background", background);
  s("seed", c.sampling.seed);
  s.finish();
  if (!background.empty()) {
    if (background.size() != kSensorCount)
      fail(ErrorKind::kFormat, "config: sampling.background needs one entry per sensor");
    for (size_t i = 0; i < kSensorCount; ++i) c.sampling.background[i] = eigen_of(background[i]);
  }
  c.finalize();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  try {
    return run_config_from_json(json::parse(read_all(path)));
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, "config '" + path.string() + "': " + e.what());
  }
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr std::array<char, 8> kCheckpointMagic = {'M', 'B', 'A', 'R', 'F', 'C', 'K', 'P'};

void put_doubles(std::string& out, std::span<const double> v) {
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

void take_doubles(const std::string& in, size_t& pos, std::span<double> v) {
  std::memcpy(v.data(), in.data() + pos, v.size() * sizeof(double));
  pos += v.size() * sizeof(double);
}

}  // namespace

std::string serialize_checkpoint(const TrainState& state) {
  json h;
  h["config"] = to_json(state.config);
  json tensors = json::array();
  for (const TensorInfo& t : state.params.layout.tensors)
    tensors.push_back({{"name", t.name},
                       {"group", to_string(t.group)},
                       {"rows", t.rows},
                       {"cols", t.cols},
                       {"offset", t.offset}});
  h["tensors"] = tensors;
  h["parameter_count"] = state.params.values.size();
  json adam_steps = json::array();
  for (const AdamSlot& a : state.field_adam) adam_steps.push_back(a.steps);
  h["field_adam_steps"] = adam_steps;
  h["iteration"] = state.iteration;
  std::ostringstream rng;
  rng << state.rng;
  h["rng"] = rng.str();
  for (SensorChannel s : kSensors) {
    const auto si = static_cast<size_t>(index_of(s));
    const std::string tag = to_string(s);
    h["train_views_" + tag] = state.train_views[si];
    h["validation_views_" + tag] = state.validation_views[si];
    json steps = json::array();
    for (const PoseSlot& p : state.poses[si]) steps.push_back(p.adam.steps);
    h["pose_adam_steps_" + tag] = steps;
    h["intrinsics_" + tag] = intrinsics_json(state.cameras.intrinsics[si]);
  }
  h["near"] = state.cameras.near;
  h["far"] = state.cameras.far;

  const std::string header = h.dump();
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header.size());
  out += header;
  put_doubles(out, state.params.values);
  for (const AdamSlot& a : state.field_adam) {
    put_doubles(out, a.m);
    put_doubles(out, a.v);
  }
  for (const auto& slots : state.poses) {
    for (const PoseSlot& p : slots) {
      const auto x = p.twist.as_vector();
      put_doubles(out, std::span<const double>(x.data(), 6));
      put_doubles(out, p.adam.m);
      put_doubles(out, p.adam.v);
    }
  }
  return out;
}

TrainState deserialize_checkpoint(const std::string& in, const std::string& source) {
  if (in.size() < 20 || std::memcmp(in.data(), kCheckpointMagic.data(), 8) != 0)
    fail(ErrorKind::kFormat, source + ": not a checkpoint (bad magic)");
  size_t pos = 8;
  const auto version = take<std::uint32_t>(in, pos, source);
  if (version != kCheckpointVersion)
    fail(ErrorKind::kVersionMismatch, source + ": checkpoint version " + std::to_string(version) +
                                          " is incompatible with version " +
                                          std::to_string(kCheckpointVersion));
  const auto header_len = take<std::uint64_t>(in, pos, source);
  if (pos + header_len > in.size()) fail(ErrorKind::kFormat, source + ": truncated header");
  json h;
  try {
    h = json::parse(in.substr(pos, header_len));
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, source + ": malformed header: " + e.what());
  }
  pos += header_len;

  TrainState st;
  try {
    st.config = run_config_from_json(h.at("config"));
    st.params.config = st.config.field;
    st.params.layout = FieldLayout::build(st.config.field);
    const json& tensors = h.at("tensors");
    if (tensors.size() != st.params.layout.tensors.size())
      fail(ErrorKind::kFormat, source + ": tensor manifest does not match the field config");
    for (size_t i = 0; i < tensors.size(); ++i) {
      const TensorInfo& t = st.params.layout.tensors[i];
      if (tensors[i].at("name") != t.name || tensors[i].at("rows") != t.rows ||
          tensors[i].at("cols") != t.cols || tensors[i].at("offset") != t.offset)
        fail(ErrorKind::kFormat, source + ": tensor '" + t.name + "' does not match the manifest");
    }
    if (h.at("parameter_count").get<size_t>() != st.params.layout.total_size)
      fail(ErrorKind::kFormat, source + ": parameter count does not match the tensor manifest");
    st.iteration = h.at("iteration").get<long>();
    std::istringstream rng(h.at("rng").get<std::string>());
    rng >> st.rng;
    if (!rng) fail(ErrorKind::kFormat, source + ": bad rng state");
    const auto adam_steps = h.at("field_adam_steps").get<std::vector<long>>();
    if (adam_steps.size() != st.params.layout.tensors.size())
      fail(ErrorKind::kFormat, source + ": optimizer state does not match the tensor manifest");
    st.field_adam.resize(adam_steps.size());
    for (size_t i = 0; i < adam_steps.size(); ++i) {
      const size_t n = st.params.layout.tensors[i].size();
      st.field_adam[i] = AdamSlot{std::vector<double>(n), std::vector<double>(n), adam_steps[i]};
    }
    for (SensorChannel s : kSensors) {
      const auto si = static_cast<size_t>(index_of(s));
      const std::string tag = to_string(s);
      st.train_views[si] = h.at("train_views_" + tag).get<std::vector<int>>();
      st.validation_views[si] = h.at("validation_views_" + tag).get<std::vector<int>>();
      const auto steps = h.at("pose_adam_steps_" + tag).get<std::vector<long>>();
      if (steps.size() != st.train_views[si].size())
        fail(ErrorKind::kFormat, source + ": pose slots do not match training views");
      st.poses[si].resize(steps.size());
      for (size_t k = 0; k < steps.size(); ++k) st.poses[si][k].adam.steps = steps[k];
      st.cameras.intrinsics[si] = intrinsics_from_json(h.at("intrinsics_" + tag));
    }
    st.cameras.near = h.at("near").get<double>();
    st.cameras.far = h.at("far").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, source + ": malformed header: " + e.what());
  }

  size_t expected = st.params.layout.total_size;
  for (const AdamSlot& a : st.field_adam) expected += a.m.size() + a.v.size();
  for (const auto& slots : st.poses) expected += slots.size() * 18;
  if (in.size() - pos != expected * sizeof(double))
    fail(ErrorKind::kFormat, source + ": buffer length " + std::to_string(in.size() - pos) +
                                 " bytes, expected " + std::to_string(expected * sizeof(double)));
  st.params.values.resize(st.params.layout.total_size);
  take_doubles(in, pos, st.params.values);
  for (AdamSlot& a : st.field_adam) {
    take_doubles(in, pos, a.m);
    take_doubles(in, pos, a.v);
  }
  for (auto& slots : st.poses) {
    for (PoseSlot& p : slots) {
      Eigen::Matrix<double, 6, 1> x;
      take_doubles(in, pos, std::span<double>(x.data(), 6));
      p.twist = Twist::from_vector(x);
      take_doubles(in, pos, p.adam.m);
      take_doubles(in, pos, p.adam.v);
    }
  }
  return st;
}

void save_checkpoint(const TrainState& state, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_all(serialize_checkpoint(state), path);
}

TrainState load_checkpoint(const fs::path& path) {
  return deserialize_checkpoint(read_all(path), "checkpoint '" + path.string() + "'");
}

}  // namespace mbarf
