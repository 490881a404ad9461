#pragma once

// Image, depth and pose metrics and the per-scene report.

#include <array>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "multibarf/dataset.hpp"
#include "multibarf/geometry.hpp"
#include "multibarf/image.hpp"
#include "multibarf/renderer.hpp"
#include "multibarf/training.hpp"

namespace mbarf {

// Returned by psnr when the two images agree exactly.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

// 10 log10(1 / MSE) over pixels not excluded by `mask`.
double psnr(const Image& a, const Image& b, const Mask* mask = nullptr);

enum class SsimWindow { kTiles8, kGaussian11 };
inline int window_size(SsimWindow w) { return w == SsimWindow::kTiles8 ? 8 : 11; }

// Mean local SSIM, averaged over channels. kTiles8 uses non-overlapping 8x8
// uniform blocks; kGaussian11 slides an 11x11 Gaussian (sigma 1.5) over every
// fully contained position. Windows touching a masked pixel are skipped.
double ssim(const Image& a, const Image& b, SsimWindow window = SsimWindow::kGaussian11,
            const Mask* mask = nullptr);

// Root mean squared difference over pixels where `valid` is true.
double depth_rmse(const Image& predicted, const Image& truth, const std::vector<bool>& valid);

// Pixels whose truth depth lies in front of `far`.
std::vector<bool> surface_hits(const Image& truth_depth, double far);

enum class Split { kTraining, kValidation };
std::string to_string(Split s);
Split split_from_string(const std::string& name);

struct SensorMetrics {
  int images = 0;
  std::optional<double> psnr;
  std::optional<double> ssim;
  std::optional<double> depth_rmse;
  std::optional<double> rotation_error_deg;
  std::optional<double> translation_error;
};

struct MetricReport {
  std::string scene_id;
  std::string method_id;
  Split split = Split::kTraining;
  bool pose_refinement = false;
  int refine_iterations = 0;
  // Start of validation refinement per sensor: "aligned-truth" or "initial".
  std::array<std::string, kSensorCount> refine_init = {"", ""};
  std::array<SensorMetrics, kSensorCount> sensors;
};

// One structured-text row per sensor.
std::string to_json_lines(const MetricReport& report);
// Aggregate table with a header row; LPIPS is reported as unavailable.
std::string to_csv(const std::vector<MetricReport>& reports);

struct EvalOptions {
  std::string method_id = "multibarf";
  SsimWindow window = SsimWindow::kGaussian11;
  bool refine_validation = true;
  // When every training view of a sensor has a ground-truth pose, refinement
  // starts from the held-out truth pose mapped into the learned frame by the
  // similarity fitted on the training poses. Otherwise it starts from the
  // held-out initial pose.
  bool init_from_aligned_truth = true;
  RefineOptions refine;
  std::array<bool, kSensorCount> sensors = {true, true};
};

struct ViewEvaluation {
  SensorChannel sensor = SensorChannel::kA;
  int view = 0;
  RigidTransform pose;  // pose the image was rendered from
  std::string refine_init;  // empty unless the pose came from validation refinement
  RenderedImage render;
  double psnr = 0.0;
  std::optional<double> ssim;  // empty when every window touches a masked pixel
  std::optional<double> depth_rmse;
};

// Renders every image of the split deterministically (bin-midpoint samples).
std::vector<ViewEvaluation> evaluate_views(const TrainState& state, const MultiSensorDataset& data,
                                           Split split, const EvalOptions& options = {});

MetricReport evaluate(const TrainState& state, const MultiSensorDataset& data, Split split,
                      const EvalOptions& options = {});

}  // namespace mbarf
