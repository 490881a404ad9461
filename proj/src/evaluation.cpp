#include "multibarf/evaluation.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#include "multibarf/error.hpp"

namespace mbarf {

double psnr(const Image& a, const Image& b, const Mask* mask) {
  require(a.same_shape(b), "psnr: image shapes differ");
  const bool use_mask = mask != nullptr && !mask->empty();
  if (use_mask)
    require(mask->width == a.width && mask->height == a.height, "psnr: mask shape differs");
  double sum = 0.0;
  size_t count = 0;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      if (use_mask && mask->at(x, y)) continue;
      for (int c = 0; c < a.channels; ++c) {
        const double d = a.at(x, y, c) - b.at(x, y, c);
        sum += d * d;
      }
      count += static_cast<size_t>(a.channels);
    }
  }
  if (count == 0) fail(ErrorKind::kEmptyDomain, "psnr: every pixel is masked");
  const double mse = sum / static_cast<double>(count);
  if (mse == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(1.0 / mse);
}

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

double local_ssim(double mx, double my, double vx, double vy, double cxy) {
  return ((2.0 * mx * my + kC1) * (2.0 * cxy + kC2)) /
         ((mx * mx + my * my + kC1) * (vx + vy + kC2));
}

bool window_masked(const Mask* mask, int x0, int y0, int size) {
  if (mask == nullptr || mask->empty()) return false;
  for (int y = y0; y < y0 + size; ++y)
    for (int x = x0; x < x0 + size; ++x)
      if (mask->at(x, y)) return true;
  return false;
}

}  // namespace

double ssim(const Image& a, const Image& b, SsimWindow window, const Mask* mask) {
  require(a.same_shape(b), "ssim: image shapes differ");
  const int size = window_size(window);
  if (a.width < size || a.height < size)
    fail(ErrorKind::kInvalidArgument, "ssim: image smaller than the " + std::to_string(size) +
                                          "x" + std::to_string(size) + " window");

  std::vector<double> weights(static_cast<size_t>(size * size), 1.0 / (size * size));
  if (window == SsimWindow::kGaussian11) {
    const double sigma = 1.5;
    double total = 0.0;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double dx = x - 5, dy = y - 5;
        weights[static_cast<size_t>(y * size + x)] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
        total += weights[static_cast<size_t>(y * size + x)];
      }
    for (double& w : weights) w /= total;
  }
  const int stride = window == SsimWindow::kTiles8 ? size : 1;

  double sum = 0.0;
  size_t count = 0;
  for (int y0 = 0; y0 + size <= a.height; y0 += stride) {
    for (int x0 = 0; x0 + size <= a.width; x0 += stride) {
      if (window_masked(mask, x0, y0, size)) continue;
      for (int c = 0; c < a.channels; ++c) {
        double mx = 0, my = 0;
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) {
            const double w = weights[static_cast<size_t>(y * size + x)];
            mx += w * a.at(x0 + x, y0 + y, c);
            my += w * b.at(x0 + x, y0 + y, c);
          }
        double vx = 0, vy = 0, cxy = 0;
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) {
            const double w = weights[static_cast<size_t>(y * size + x)];
            const double dx = a.at(x0 + x, y0 + y, c) - mx;
            const double dy = b.at(x0 + x, y0 + y, c) - my;
            vx += w * dx * dx;
            vy += w * dy * dy;
            cxy += w * dx * dy;
          }
        sum += local_ssim(mx, my, vx, vy, cxy);
        ++count;
      }
    }
  }
  if (count == 0) fail(ErrorKind::kEmptyDomain, "ssim: every window touches a masked pixel");
  return sum / static_cast<double>(count);
}

double depth_rmse(const Image& predicted, const Image& truth, const std::vector<bool>& valid) {
  require(predicted.same_shape(truth), "depth_rmse: depth map shapes differ");
  require(predicted.channels == 1, "depth_rmse: depth maps must have one channel");
  require(valid.size() == truth.pixel_count(), "depth_rmse: mask size differs");
  double sum = 0.0;
  size_t count = 0;
  for (size_t i = 0; i < valid.size(); ++i) {
    if (!valid[i]) continue;
    const double d = predicted.data[i] - truth.data[i];
    sum += d * d;
    ++count;
  }
  if (count == 0) fail(ErrorKind::kEmptyDomain, "depth_rmse: empty valid mask");
  return std::sqrt(sum / static_cast<double>(count));
}

std::vector<bool> surface_hits(const Image& truth_depth, double far) {
  std::vector<bool> hits(truth_depth.pixel_count());
  for (size_t i = 0; i < hits.size(); ++i) hits[i] = truth_depth.data[i] < far - 1e-9;
  return hits;
}

std::string to_string(Split s) { return s == Split::kTraining ? "training" : "validation"; }

Split split_from_string(const std::string& name) {
  if (name == "train" || name == "training") return Split::kTraining;
  if (name == "val" || name == "validation") return Split::kValidation;
  fail(ErrorKind::kInvalidArgument, "unknown split '" + name + "'");
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  if (std::isinf(*v)) return "inf";
  return *v;
}

std::string optional_csv(const std::optional<double>& v) {
  if (!v) return "";
  if (std::isinf(*v)) return "inf";
  std::ostringstream os;
  os << std::setprecision(6) << *v;
  return os.str();
}

}  // namespace

std::string to_json_lines(const MetricReport& report) {
  std::string out;
  for (SensorChannel s : kSensors) {
    const SensorMetrics& m = report.sensors[static_cast<size_t>(index_of(s))];
    nlohmann::json j;
    j["scene_id"] = report.scene_id;
    j["method_id"] = report.method_id;
    j["split"] = to_string(report.split);
    j["sensor"] = to_string(s);
    j["images"] = m.images;
    j["psnr"] = optional_json(m.psnr);
    j["ssim"] = optional_json(m.ssim);
    j["lpips"] = "unavailable";
    j["depth_rmse"] = optional_json(m.depth_rmse);
    j["rotation_error_deg"] = optional_json(m.rotation_error_deg);
    j["translation_error"] = optional_json(m.translation_error);
    j["pose_refinement"] = report.pose_refinement;
    j["refine_iterations"] = report.refine_iterations;
    const std::string& init = report.refine_init[static_cast<size_t>(index_of(s))];
    j["refine_init"] = init.empty() ? nlohmann::json(nullptr) : nlohmann::json(init);
    out += j.dump() + "\n";
  }
  return out;
}

std::string to_csv(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os << "scene_id,method_id,split,sensor,images,psnr,ssim,lpips,depth_rmse,rotation_error_deg,"
        "translation_error,pose_refinement,refine_init\n";
  for (const MetricReport& r : reports) {
    for (SensorChannel s : kSensors) {
      const SensorMetrics& m = r.sensors[static_cast<size_t>(index_of(s))];
      os << r.scene_id << ',' << r.method_id << ',' << to_string(r.split) << ',' << to_string(s)
         << ',' << m.images << ',' << optional_csv(m.psnr) << ',' << optional_csv(m.ssim)
         << ",unavailable," << optional_csv(m.depth_rmse) << ','
         << optional_csv(m.rotation_error_deg) << ',' << optional_csv(m.translation_error) << ','
         << (r.pose_refinement ? "true" : "false") << ','
         << r.refine_init[static_cast<size_t>(index_of(s))] << '\n';
    }
  }
  return os.str();
}

namespace {

// Similarity taking ground-truth poses of a sensor into the learned frame,
// fitted on its training views.
std::optional<Similarity> truth_to_learned(const TrainState& state, const MultiSensorDataset& data,
                                           SensorChannel s) {
  const auto si = static_cast<size_t>(index_of(s));
  const SensorSet& set = data.sensor(s);
  std::vector<RigidTransform> learned, truth;
  for (size_t slot = 0; slot < state.train_views[si].size(); ++slot) {
    const View& view = set.views.at(static_cast<size_t>(state.train_views[si][slot]));
    if (!view.truth_pose) return std::nullopt;
    truth.push_back(*view.truth_pose);
    learned.push_back(state.pose(data, s, static_cast<int>(slot)));
  }
  if (truth.size() < 3) return std::nullopt;
  try {
    return align_similarity(truth, learned);
  } catch (const Error& err) {
    if (err.kind() != ErrorKind::kAlignmentDegenerate) throw;
    return std::nullopt;
  }
}

}  // namespace

std::vector<ViewEvaluation> evaluate_views(const TrainState& state, const MultiSensorDataset& data,
                                           Split split, const EvalOptions& options) {
  SamplingConfig sampling = state.config.sampling;
  sampling.stratified = false;
  const double alpha = state.current_alpha();
  std::vector<ViewEvaluation> out;
  for (SensorChannel s : kSensors) {
    const auto si = static_cast<size_t>(index_of(s));
    if (!options.sensors[si]) continue;
    const SensorSet& set = data.sensor(s);
    const auto& views = split == Split::kTraining ? state.train_views[si] : state.validation_views[si];
    std::optional<Similarity> start_frame;
    if (split == Split::kValidation && options.refine_validation && options.init_from_aligned_truth &&
        !views.empty())
      start_frame = truth_to_learned(state, data, s);
    for (size_t slot = 0; slot < views.size(); ++slot) {
      const int view_index = views[slot];
      const View& view = set.views.at(static_cast<size_t>(view_index));
      ViewEvaluation ev;
      ev.sensor = s;
      ev.view = view_index;
      if (split == Split::kTraining) {
        ev.pose = state.pose(data, s, static_cast<int>(slot));
      } else if (options.refine_validation) {
        RefineOptions ro = options.refine;
        ro.seed = mix64(options.refine.seed ^ (si << 32) ^ static_cast<std::uint64_t>(view_index));
        RigidTransform start = view.initial_pose;
        ev.refine_init = "initial";
        if (start_frame && view.truth_pose) {
          start = start_frame->apply(*view.truth_pose);
          ev.refine_init = "aligned-truth";
        }
        const Twist t = refine_pose(state, view, set.intrinsics, s, start, data.near, data.far, ro);
        ev.pose = apply_twist(t, start);
      } else {
        ev.pose = view.initial_pose;
      }
      ev.render = render_image(state.params, ev.pose, set.intrinsics, s, state.config.encoding,
                               alpha, sampling, data.near, data.far);
      const Mask* mask = view.mask.empty() ? nullptr : &view.mask;
      ev.psnr = psnr(ev.render.color, view.image, mask);
      // Left unset when the image is smaller than the window or every window
      // touches a masked pixel.
      const int w = window_size(options.window);
      if (set.intrinsics.width >= w && set.intrinsics.height >= w) {
        try {
          ev.ssim = ssim(ev.render.color, view.image, options.window, mask);
        } catch (const Error& err) {
          if (err.kind() != ErrorKind::kEmptyDomain) throw;
        }
      }
      if (view.truth_depth) {
        const std::vector<bool> hits = surface_hits(*view.truth_depth, data.far);
        bool any = false;
        for (bool h : hits) any = any || h;
        if (any) ev.depth_rmse = depth_rmse(ev.render.depth, *view.truth_depth, hits);
      }
      out.push_back(std::move(ev));
    }
  }
  return out;
}

MetricReport evaluate(const TrainState& state, const MultiSensorDataset& data, Split split,
                      const EvalOptions& options) {
  MetricReport report;
  report.scene_id = data.scene_id;
  report.method_id = options.method_id;
  report.split = split;
  report.pose_refinement = split == Split::kValidation && options.refine_validation;
  report.refine_iterations = report.pose_refinement ? options.refine.iterations : 0;

  const std::vector<ViewEvaluation> evals = evaluate_views(state, data, split, options);
  for (SensorChannel s : kSensors) {
    SensorMetrics& m = report.sensors[static_cast<size_t>(index_of(s))];
    double psnr_sum = 0, ssim_sum = 0, depth_sq = 0;
    int ssim_count = 0, depth_count = 0;
    std::vector<RigidTransform> estimated, truth;
    for (const ViewEvaluation& ev : evals) {
      if (ev.sensor != s) continue;
      ++m.images;
      if (!ev.refine_init.empty()) {
        std::string& init = report.refine_init[static_cast<size_t>(index_of(s))];
        init = init.empty() || init == ev.refine_init ? ev.refine_init : "mixed";
      }
      psnr_sum += ev.psnr;
      if (ev.ssim) {
        ssim_sum += *ev.ssim;
        ++ssim_count;
      }
      if (ev.depth_rmse) {
        depth_sq += *ev.depth_rmse * *ev.depth_rmse;
        ++depth_count;
      }
      const View& view = data.sensor(s).views[static_cast<size_t>(ev.view)];
      if (view.truth_pose) {
        estimated.push_back(ev.pose);
        truth.push_back(*view.truth_pose);
      }
    }
    if (m.images == 0) continue;
    m.psnr = psnr_sum / m.images;
    if (ssim_count > 0) m.ssim = ssim_sum / ssim_count;
    // Per-view RMSEs are pooled as a root of their mean square.
    if (depth_count > 0) m.depth_rmse = std::sqrt(depth_sq / depth_count);
    if (estimated.size() >= 3 && estimated.size() == static_cast<size_t>(m.images)) {
      try {
        const PoseError e = pose_alignment_error(estimated, truth);
        m.rotation_error_deg = e.rotation_deg;
        m.translation_error = e.translation;
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::kAlignmentDegenerate) throw;
      }
    }
  }
  return report;
}

}  // namespace mbarf
