// Command-line front end: scene generation, training, rendering, evaluation.

#include <malloc.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "multibarf/datastore.hpp"
#include "multibarf/error.hpp"
#include "multibarf/evaluation.hpp"
#include "multibarf/synthetic.hpp"
#include "multibarf/training.hpp"

namespace {

using namespace mbarf;
using nlohmann::json;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) fail(ErrorKind::kIo, "failed writing '" + path.string() + "'");
}

struct GenerateArgs {
  std::string preset = "textured-shapes";
  std::uint64_t seed = 0;
  int views_a = 12;
  int views_b = 12;
  double noise_deg = 5.0;
  double noise_trans = 0.02;
  int width = 64;
  int height = 64;
  std::string out;
};

void run_generate(const GenerateArgs& a) {
  const SceneSpec spec = generate_scene(a.preset, a.seed);
  DatasetOptions opts;
  opts.width = a.width;
  opts.height = a.height;
  const SyntheticDataset ds =
      make_dataset(spec, a.views_a, a.views_b, {a.noise_deg, a.noise_trans}, a.seed, opts);
  save_dataset(ds, a.out);
  std::cout << "wrote " << a.views_a + a.views_b << " images to " << a.out << "\n";
}

struct TrainArgs {
  std::string dataset;
  std::string config;
  std::string schedule = "alternating";
  std::string out;
  std::optional<long> iterations;
  std::optional<std::uint64_t> seed;
  std::string resume;
};

void run_train(const TrainArgs& a) {
  const MultiSensorDataset data = load_dataset(a.dataset);
  RunConfig cfg = a.config.empty() ? RunConfig::desk() : load_run_config(a.config);
  cfg.train.schedule = schedule_from_string(a.schedule);
  if (a.iterations) cfg.train.iterations = *a.iterations;
  if (a.seed) cfg.train.seed = *a.seed;
  cfg.finalize();

  const fs::path out(a.out);
  fs::create_directories(out);
  write_text(out / "config.json", to_json(cfg).dump(2) + "\n");
  std::ofstream log(out / "train_log.jsonl", std::ios::trunc);
  if (!log) fail(ErrorKind::kIo, "cannot open '" + (out / "train_log.jsonl").string() + "'");

  TrainHooks hooks;
  hooks.on_log = [&](const LogRecord& r) {
    log << to_json_line(r) << "\n";
    log.flush();
    std::cout << "iter " << r.iteration << " mode " << to_string(r.mode) << " loss " << r.loss;
    for (SensorChannel s : kSensors)
      if (const auto& v = r.validation_psnr[static_cast<size_t>(index_of(s))])
        std::cout << " val_psnr_" << to_string(s) << " " << *v;
    std::cout << "\n";
  };
  hooks.on_checkpoint = [&](const TrainState& st) { save_checkpoint(st, out / "checkpoint.mbck"); };

  TrainState state;
  if (!a.resume.empty()) {
    state = load_checkpoint(a.resume);
    state.config.train.iterations = cfg.train.iterations;
  } else {
    state = init_train_state(data, cfg);
  }
  train_until(state, data, total_iterations(state.config.train), hooks);
  save_checkpoint(state, out / "checkpoint.mbck");
  std::cout << "wrote " << (out / "checkpoint.mbck").string() << "\n";
}

struct RenderArgs {
  std::string checkpoint;
  std::string pose;
  std::string dataset;
  std::string sensor = "A";
  std::string out;
};

void run_render(const RenderArgs& a) {
  const TrainState st = load_checkpoint(a.checkpoint);
  const SensorChannel s = sensor_from_string(a.sensor);
  const auto si = static_cast<size_t>(index_of(s));
  RigidTransform pose;
  const bool is_index =
      !a.pose.empty() && a.pose.find_first_not_of("0123456789") == std::string::npos;
  if (is_index) {
    if (a.dataset.empty())
      fail(ErrorKind::kInvalidArgument, "render: --pose <index> needs --dataset");
    const MultiSensorDataset data = load_dataset(a.dataset);
    const int slot = std::stoi(a.pose);
    if (slot < 0 || static_cast<size_t>(slot) >= st.train_views[si].size())
      fail(ErrorKind::kInvalidArgument,
           "render: pose index " + a.pose + " out of range for sensor " + a.sensor + " (" +
               std::to_string(st.train_views[si].size()) + " training images)");
    pose = st.pose(data, s, slot);
  } else {
    std::ifstream in(a.pose);
    if (!in) fail(ErrorKind::kIo, "cannot open pose file '" + a.pose + "'");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      fail(ErrorKind::kFormat, "pose file '" + a.pose + "': " + e.what());
    }
    pose = pose_from_json(j.is_object() ? j.at("pose") : j, "pose file '" + a.pose + "'");
    require(pose.orthonormality_error() < 1e-6, "render: pose rotation is not orthonormal");
  }
  SamplingConfig sampling = st.config.sampling;
  sampling.stratified = false;
  const RenderedPair pair =
      render_pair(st.params, pose, st.cameras.intrinsics[si], st.config.encoding,
                  st.current_alpha(), sampling, st.cameras.near, st.cameras.far);
  const fs::path out(a.out);
  fs::create_directories(out);
  write_png(pair.image_a, out / "image_A.png");
  write_png(pair.image_b, out / "image_B.png");
  write_depth(pair.depth, out / "depth.mbd");
  std::cout << "wrote image_A.png, image_B.png, depth.mbd to " << a.out << "\n";
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string dataset;
  std::string split = "val";
  std::string method = "multibarf";
  int refine_iterations = 200;
  std::string out;
};

void run_evaluate(const EvaluateArgs& a) {
  const TrainState st = load_checkpoint(a.checkpoint);
  const MultiSensorDataset data = load_dataset(a.dataset);
  EvalOptions opts;
  opts.method_id = a.method;
  opts.refine.iterations = a.refine_iterations;
  opts.refine_validation = a.refine_iterations > 0;
  const MetricReport report = evaluate(st, data, split_from_string(a.split), opts);
  const fs::path out(a.out);
  fs::create_directories(out);
  write_text(out / "metrics.jsonl", to_json_lines(report));
  write_text(out / "metrics.csv", to_csv({report}));
  std::cout << to_csv({report});
}

struct PoseReportArgs {
  std::string checkpoint;
  std::string dataset;
  std::string out;
};

void run_pose_report(const PoseReportArgs& a) {
  const TrainState st = load_checkpoint(a.checkpoint);
  const MultiSensorDataset data = load_dataset(a.dataset);
  json report;
  report["scene_id"] = data.scene_id;
  report["iteration"] = st.iteration;
  std::vector<RigidTransform> all_est, all_truth;
  for (SensorChannel s : kSensors) {
    const auto si = static_cast<size_t>(index_of(s));
    std::vector<RigidTransform> est, truth;
    json views = json::array();
    for (size_t slot = 0; slot < st.train_views[si].size(); ++slot) {
      const View& v = data.sensor(s).views.at(static_cast<size_t>(st.train_views[si][slot]));
      const RigidTransform p = st.pose(data, s, static_cast<int>(slot));
      views.push_back({{"name", v.name}, {"pose", pose_to_json(p)}});
      if (v.truth_pose) {
        est.push_back(p);
        truth.push_back(*v.truth_pose);
      }
    }
    json sj;
    sj["views"] = views;
    if (est.size() >= 3) {
      const PoseError e = pose_alignment_error(est, truth);
      sj["rotation_error_deg"] = e.rotation_deg;
      sj["translation_error"] = e.translation;
    }
    all_est.insert(all_est.end(), est.begin(), est.end());
    all_truth.insert(all_truth.end(), truth.begin(), truth.end());
    report[to_string(s)] = sj;
  }
  if (all_est.size() >= 3) {
    // Both sensors aligned with one similarity transform: the cross-sensor
    // registration error.
    const PoseError e = pose_alignment_error(all_est, all_truth);
    report["joint"] = {{"rotation_error_deg", e.rotation_deg}, {"translation_error", e.translation}};
  }
  write_text(a.out, report.dump(2) + "\n");
  std::cout << "wrote " << a.out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  // Large temporaries are recycled between steps instead of being returned
  // to the kernel and faulted back in.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);

  CLI::App app{"Joint radiance-field and pose optimization over two sensors"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-scene", "Render a synthetic two-sensor dataset");
  g->add_option("--preset", gen.preset, "textured-shapes | shared-boundary-subset")->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--views-a", gen.views_a)->capture_default_str();
  g->add_option("--views-b", gen.views_b)->capture_default_str();
  g->add_option("--pose-noise-deg", gen.noise_deg)->capture_default_str();
  g->add_option("--pose-noise-trans", gen.noise_trans, "fraction of the scene radius")->capture_default_str();
  g->add_option("--width", gen.width)->capture_default_str();
  g->add_option("--height", gen.height)->capture_default_str();
  g->add_option("--out", gen.out)->required();

  TrainArgs tr;
  bool dump_config = false;
  auto* t = app.add_subcommand("train", "Optimize field and poses");
  t->add_option("--dataset", tr.dataset);
  t->add_option("--config", tr.config, "JSON run config (defaults: desk scale)");
  t->add_option("--schedule", tr.schedule)
      ->check(CLI::IsMember({"alternating", "sequential", "sequential-frozen", "single-a", "single-b"}))
      ->capture_default_str();
  t->add_option("--out", tr.out);
  t->add_option("--iterations", tr.iterations, "override train.iterations");
  t->add_option("--seed", tr.seed, "override train.seed");
  t->add_option("--resume", tr.resume, "continue from a checkpoint");
  t->add_flag("--dump-config", dump_config, "print the full default config and exit");

  RenderArgs rd;
  auto* r = app.add_subcommand("render", "Render both sensors and depth from one viewpoint");
  r->add_option("--checkpoint", rd.checkpoint)->required();
  r->add_option("--pose", rd.pose, "pose JSON file (3x4 row-major) or training image index")->required();
  r->add_option("--dataset", rd.dataset, "needed when --pose is an index");
  r->add_option("--sensor", rd.sensor, "sensor whose intrinsics (and index) to use")
      ->check(CLI::IsMember({"A", "B"}))
      ->capture_default_str();
  r->add_option("--out", rd.out)->required();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Compute PSNR, SSIM, depth and pose metrics");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--dataset", ev.dataset)->required();
  e->add_option("--split", ev.split)->check(CLI::IsMember({"train", "val"}))->capture_default_str();
  e->add_option("--method", ev.method)->capture_default_str();
  e->add_option("--refine-iterations", ev.refine_iterations, "test-time pose refinement steps (0 disables)")
      ->capture_default_str();
  e->add_option("--out", ev.out)->required();

  PoseReportArgs pr;
  auto* p = app.add_subcommand("pose-report", "Pose errors after similarity alignment");
  p->add_option("--checkpoint", pr.checkpoint)->required();
  p->add_option("--dataset", pr.dataset)->required();
  p->add_option("--out", pr.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*g) {
      run_generate(gen);
    } else if (*t) {
      if (dump_config) {
        std::cout << to_json(RunConfig::desk()).dump(2) << "\n";
        return 0;
      }
      if (tr.dataset.empty() || tr.out.empty()) {
        std::cerr << "train: --dataset and --out are required\n" << t->help();
        return 2;
      }
      run_train(tr);
    } else if (*r) {
      run_render(rd);
    } else if (*e) {
      run_evaluate(ev);
    } else if (*p) {
      run_pose_report(pr);
    }
  } catch (const DivergedError& err) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(to_string(err.kind())).c_str(), err.what());
    return 1;
  } catch (const Error& err) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(to_string(err.kind())).c_str(), err.what());
    return 1;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: internal: %s\n", err.what());
    return 1;
  }
  return 0;
}
