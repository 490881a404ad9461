#pragma once

// On-disk formats: PNG images, float depth files, dataset directories,
// run configs and checkpoints.

#include <array>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "multibarf/dataset.hpp"
#include "multibarf/image.hpp"
#include "multibarf/synthetic.hpp"
#include "multibarf/training.hpp"

namespace mbarf {

namespace fs = std::filesystem;

// 8-bit PNG, gray for one channel and RGB for three. Values are clamped to
// [0, 1] and rounded to the nearest level.
void write_png(const Image& image, const fs::path& path);
Image read_png(const fs::path& path);

// Rounds every value to the nearest of the 256 levels write_png produces.
Image quantize_8bit(const Image& image);

// Exclusion masks are stored as gray PNGs, 255 marking excluded pixels.
void write_mask_png(const Mask& mask, const fs::path& path);
Mask read_mask_png(const fs::path& path);

// 16-byte header (8-byte magic, uint32 width, uint32 height, little endian)
// followed by width * height float32 values in row-major order.
inline constexpr std::array<char, 8> kDepthMagic = {'M', 'B', 'D', 'E', 'P', 'T', 'H', '1'};
void write_depth(const Image& depth, const fs::path& path);
Image read_depth(const fs::path& path);

// Writes manifest.json plus per-view image, mask and depth files.
void save_dataset(const MultiSensorDataset& data, const fs::path& dir);
void save_dataset(const SyntheticDataset& ds, const fs::path& dir);
MultiSensorDataset load_dataset(const fs::path& dir);

nlohmann::json to_json(const RunConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const fs::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const TrainState& state, const fs::path& path);
TrainState load_checkpoint(const fs::path& path);

// Bytes of a checkpoint as save_checkpoint would write them.
std::string serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(const std::string& bytes, const std::string& source = "checkpoint");

nlohmann::json pose_to_json(const RigidTransform& pose);  // 3x4 row-major
RigidTransform pose_from_json(const nlohmann::json& j, const std::string& where);

}  // namespace mbarf
