#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "semcal/errors.hpp"

namespace semcal::cli {

namespace {

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

const char* kind_name(SweepKind kind) { return kind == SweepKind::Frames ? "frames" : "noise"; }

SweepRow run_one(const SweepOptions& o, double level, std::uint64_t seed) {
  SceneSpec spec = o.scene;
  spec.seed = seed;
  int frames = o.frames;
  spec.label_noise_rate = o.noise;
  if (o.kind == SweepKind::Frames) {
    frames = static_cast<int>(std::lround(level));
  } else {
    spec.label_noise_rate = level;
  }
  const std::vector<PosedScene> scenes = generate_scenes(spec, frames);
  const RigidTransform truth = *scenes.front().T_true;

  RigidTransform start;
  if (o.start == SweepStart::Perturbed) {
    start = perturb_pose(truth, o.start_rot_deg, o.start_trans_m, seed ^ 0x5354415254ULL);
  } else {
    InitOptions init;
    init.seed = seed;
    init.pnp.seed = seed;
    start = initial_calibration(scenes.front().cloud, scenes.front().image, scenes.front().K,
                                spec.lidar, init)
                .transform;
  }
  CalibConfig cfg = o.cfg;
  cfg.seed = seed;
  const CalibrationResult r = calibrate(scenes, start, cfg);
  const PoseError e = pose_error(r.transform, truth);
  return {kind_name(o.kind), level, seed, e.rot_deg, e.trans_m, r.best_mi};
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// ---- command line helpers ----------------------------------------------------

struct InputFlags {
  std::string scene, frames, labels, images, intrinsics, lidar;
  int num_classes = 0;
};

void add_input_flags(CLI::App* app, InputFlags& f) {
  auto* scene = app->add_option("--scene", f.scene, "Scene directory written by `synth`");
  auto* frames = app->add_option("--frames", f.frames, "Point cloud files (file, dir or glob)");
  auto* labels =
      app->add_option("--labels", f.labels, "Per-point uint32 label sidecars for .bin clouds");
  auto* images = app->add_option("--images", f.images, "Label images (file, dir or glob)");
  auto* intr = app->add_option("--intrinsics", f.intrinsics, "Camera intrinsics JSON");
  app->add_option("--lidar", f.lidar, "LiDAR geometry JSON");
  app->add_option("--num-classes", f.num_classes, "Number of classes (default: from data)");
  scene->excludes(frames)->excludes(labels)->excludes(images)->excludes(intr);
  frames->needs(images)->needs(intr);
  images->needs(frames);
  labels->needs(frames);
}

SceneSet load_inputs(const InputFlags& f) {
  SceneSet set;
  if (!f.scene.empty()) {
    set = read_scene_dir(f.scene, f.num_classes);
  } else if (!f.frames.empty()) {
    std::vector<fs::path> sidecars;
    if (!f.labels.empty()) sidecars = expand_paths(f.labels);
    set.scenes = load_scenes(expand_paths(f.frames), expand_paths(f.images), sidecars,
                             read_intrinsics(f.intrinsics), f.num_classes);
  } else {
    throw InvalidArgument("give --scene or --frames/--images/--intrinsics");
  }
  if (!f.lidar.empty()) set.lidar = read_lidar_geometry(f.lidar);
  return set;
}

void add_config_flags(CLI::App* app, CalibConfig& cfg) {
  app->add_option("--lr-theta", cfg.lr_theta, "Statistic network learning rate");
  app->add_option("--lr-pose", cfg.lr_pose, "Pose learning rate");
  app->add_option("--batch-size", cfg.batch_size, "Points per iteration");
  app->add_option("--max-iters", cfg.max_iters, "Iteration limit");
  app->add_option("--decay-every", cfg.decay_every, "Learning-rate decay period");
  app->add_option("--lr-decay", cfg.lr_decay, "Learning-rate decay factor");
  app->add_option("--window", cfg.convergence_window, "Convergence window (iterations)");
  app->add_option("--tol", cfg.convergence_tol, "Convergence tolerance on the MI estimate");
  app->add_option("--hidden", cfg.hidden, "Hidden units per layer");
  app->add_flag("!--no-marginal-grad", cfg.marginal_grad,
                "Drop the marginal-sample term from the pose gradient");
}

std::ostream* info_stream(std::ostream& err) { return log_level() >= 1 ? &err : nullptr; }

}  // namespace

int log_level() {
  const char* env = std::getenv("SEMCAL_LOG");
  if (!env || !*env) return 1;
  const std::string v = env;
  if (v == "quiet" || v == "error") return 0;
  if (v == "info") return 1;
  if (v == "debug") return 2;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  return *end == '\0' ? static_cast<int>(std::clamp(n, 0L, 2L)) : 1;
}

CalibrateOutcome cmd_calibrate(const CalibrateInputs& in, std::ostream* log) {
  if (in.scenes.empty()) throw InvalidArgument("no scenes");
  in.cfg.validate();
  CalibrateOutcome outcome;
  RigidTransform start;
  if (in.init_transform) {
    start = *in.init_transform;
  } else {
    const PosedScene& s = in.scenes.front();
    outcome.initialization = initial_calibration(s.cloud, s.image, s.K, in.lidar, in.init);
    start = outcome.initialization->transform;
    if (log) {
      const auto& reg = outcome.initialization->registration;
      *log << "init shift " << reg.dx << "," << reg.dy << " mi " << fmt(reg.mi)
           << " inliers " << outcome.initialization->inliers << "/"
           << outcome.initialization->correspondences << "\n";
    }
  }
  const CalibrationResult r = calibrate(in.scenes, start, in.cfg, in.reference, log);
  outcome.file = make_calibration_file(r, in.scenes.front().K, in.cfg, in.reference);
  outcome.exit_code = r.converged ? kExitConverged : kExitMaxIters;
  if (in.out) write_result(outcome.file, *in.out);
  return outcome;
}

std::vector<SweepRow> cmd_sweep(const SweepOptions& o, std::ostream* log) {
  if (o.levels.empty()) throw InvalidArgument("sweep needs at least one level");
  if (o.runs < 3) throw InvalidArgument("sweep needs at least 3 runs per level");
  if (o.jobs < 1) throw InvalidArgument("jobs must be positive");
  for (double level : o.levels) {
    if (o.kind == SweepKind::Frames && !(level >= 1 && level == std::floor(level))) {
      throw InvalidArgument("frame levels must be positive integers, got " + fmt(level));
    }
    if (o.kind == SweepKind::Noise && !(level >= 0 && level < 1)) {
      throw InvalidArgument("noise levels must lie in [0, 1), got " + fmt(level));
    }
  }
  o.cfg.validate();
  o.scene.validate();

  const std::size_t total = o.levels.size() * static_cast<std::size_t>(o.runs);
  std::vector<SweepRow> rows(total);
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;

  auto worker = [&] {
    for (std::size_t k = next++; k < total; k = next++) {
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      const double level = o.levels[k / o.runs];
      const std::uint64_t seed = o.seed + k % o.runs;
      try {
        rows[k] = run_one(o, level, seed);
        if (log) {
          std::lock_guard lock(mu);
          *log << kind_name(o.kind) << " " << fmt(level) << " seed " << seed << " rot_deg "
               << fmt(rows[k].rot_deg, 4) << " trans_m " << fmt(rows[k].trans_m, 4) << "\n";
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const int threads = static_cast<int>(std::min<std::size_t>(o.jobs, total));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
  out << "kind,level,seed,rot_deg,trans_m,mi_final\n";
  for (const auto& r : rows) {
    out << r.kind << "," << fmt(r.level) << "," << r.seed << "," << fmt(r.rot_deg, 17) << ","
        << fmt(r.trans_m, 17) << "," << fmt(r.mi_final, 17) << "\n";
  }
}

std::vector<LevelSummary> summarize(const std::vector<SweepRow>& rows) {
  std::vector<double> levels;
  for (const auto& r : rows) {
    if (std::find(levels.begin(), levels.end(), r.level) == levels.end()) {
      levels.push_back(r.level);
    }
  }
  std::vector<LevelSummary> out;
  for (double level : levels) {
    std::vector<double> rot, trans;
    for (const auto& r : rows) {
      if (r.level == level) {
        rot.push_back(r.rot_deg);
        trans.push_back(r.trans_m);
      }
    }
    auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
      mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double ss = 0;
      for (double x : v) ss += (x - mean) * (x - mean);
      sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    };
    LevelSummary s;
    s.level = level;
    s.n = rot.size();
    mean_std(rot, s.mean_rot, s.std_rot);
    mean_std(trans, s.mean_trans, s.std_trans);
    s.median_rot = quantile(rot, 0.5);
    out.push_back(s);
  }
  return out;
}

void write_box_plot_svg(const std::vector<SweepRow>& rows, std::ostream& out) {
  const auto summary = summarize(rows);
  const double left = 70, top = 30, plot_h = 300, slot = 90;
  const double width = left + slot * static_cast<double>(summary.size()) + 30;
  const double height = top + plot_h + 60;
  double ymax = 0;
  for (const auto& r : rows) ymax = std::max(ymax, r.rot_deg);
  ymax = ymax > 0 ? ymax * 1.1 : 1.0;
  auto y = [&](double v) { return top + plot_h * (1.0 - v / ymax); };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = ymax * t / 4;
    out << "<text x=\"" << left - 6 << "\" y=\"" << y(v) + 4 << "\" text-anchor=\"end\">"
        << fmt(v, 3) << "</text>\n";
  }
  out << "<text x=\"16\" y=\"" << top + plot_h / 2 << "\" transform=\"rotate(-90 16 "
      << top + plot_h / 2 << ")\" text-anchor=\"middle\">rotation error (deg)</text>\n";
  for (std::size_t i = 0; i < summary.size(); ++i) {
    std::vector<double> v;
    for (const auto& r : rows) {
      if (r.level == summary[i].level) v.push_back(r.rot_deg);
    }
    const double cx = left + slot * (static_cast<double>(i) + 0.5);
    const double q1 = quantile(v, 0.25), q2 = quantile(v, 0.5), q3 = quantile(v, 0.75);
    const double lo = *std::min_element(v.begin(), v.end());
    const double hi = *std::max_element(v.begin(), v.end());
    out << "<line x1=\"" << cx << "\" y1=\"" << y(lo) << "\" x2=\"" << cx << "\" y2=\""
        << y(hi) << "\" stroke=\"black\"/>\n";
    out << "<rect x=\"" << cx - 20 << "\" y=\"" << y(q3) << "\" width=\"40\" height=\""
        << std::max(y(q1) - y(q3), 0.5) << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << cx - 20 << "\" y1=\"" << y(q2) << "\" x2=\"" << cx + 20
        << "\" y2=\"" << y(q2) << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << cx << "\" y=\"" << top + plot_h + 20
        << "\" text-anchor=\"middle\">" << fmt(summary[i].level) << "</text>\n";
  }
  if (!rows.empty()) {
    out << "<text x=\"" << left + (width - left) / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\">" << rows.front().kind << "</text>\n";
  }
  out << "</svg>\n";
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Targetless LiDAR-camera extrinsic calibration from semantic labels", "semcal"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene directory");
  SceneSpec spec;
  std::string synth_out;
  int count = 10;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", spec.seed, "World and extrinsic seed");
  synth->add_option("--count", count, "Number of frames")->check(CLI::PositiveNumber);
  synth->add_option("--noise", spec.label_noise_rate, "Label noise rate in [0, 1)");
  synth->add_option("--mount-rot", spec.mount_rotation_deg, "Mount rotation spread (deg)");
  synth->add_option("--mount-trans", spec.mount_translation_m, "Mount translation spread (m)");

  // init
  auto* init = app.add_subcommand("init", "Estimate an initial transform");
  InputFlags init_in;
  InitOptions init_opts;
  std::string init_out, init_ref;
  add_input_flags(init, init_in);
  init->add_option("--seed", init_opts.seed, "Random seed");
  init->add_option("--correspondences", init_opts.correspondences, "Correspondences to draw");
  init->add_option("--reference", init_ref, "Reference transform JSON");
  init->add_option("--out", init_out, "Transform JSON to write");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Run the full calibration");
  InputFlags cal_in;
  CalibConfig cfg;
  std::string cal_init, cal_ref, cal_out = "calibration.json";
  std::uint64_t cal_seed = 0;
  add_input_flags(cal, cal_in);
  add_config_flags(cal, cfg);
  cal->add_option("--init-transform", cal_init, "Start from this transform, skip initialization");
  cal->add_option("--reference", cal_ref, "Reference transform JSON");
  cal->add_option("--seed", cal_seed, "Random seed");
  cal->add_option("--out", cal_out, "Result JSON")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "Compare a result or transform with a reference");
  std::string ev_result, ev_transform, ev_ref, ev_scene;
  auto* ev_r = ev->add_option("--result", ev_result, "Calibration result JSON");
  auto* ev_t = ev->add_option("--transform", ev_transform, "Transform JSON");
  auto* ev_ref_opt = ev->add_option("--reference", ev_ref, "Reference transform JSON");
  auto* ev_scene_opt = ev->add_option("--scene", ev_scene, "Scene directory with reference.json");
  ev_r->excludes(ev_t);
  ev_ref_opt->excludes(ev_scene_opt);

  // sweep
  auto* sw = app.add_subcommand("sweep", "Repeated synthetic calibrations, CSV of errors");
  SweepOptions so;
  so.levels.clear();
  std::string sw_kind = "frames", sw_start = "perturbed", sw_out, sw_svg;
  sw->add_option("--kind", sw_kind, "frames or noise")
      ->check(CLI::IsMember({"frames", "noise"}));
  sw->add_option("--levels", so.levels, "Frame counts or noise rates")->delimiter(',');
  sw->add_option("--runs", so.runs, "Runs per level (>= 3)");
  sw->add_option("--seed", so.seed, "First seed");
  sw->add_option("--frames-per-run", so.frames, "Frames per run in a noise sweep");
  sw->add_option("--noise", so.noise, "Label noise in a frames sweep");
  sw->add_option("--start", sw_start, "perturbed or init")
      ->check(CLI::IsMember({"perturbed", "init"}));
  sw->add_option("--start-rot", so.start_rot_deg, "Start rotation offset (deg)");
  sw->add_option("--start-trans", so.start_trans_m, "Start translation offset (m)");
  sw->add_option("--jobs", so.jobs, "Parallel runs")->check(CLI::PositiveNumber);
  sw->add_option("--out", sw_out, "CSV file (default: stdout)");
  sw->add_option("--svg", sw_svg, "Box plot SVG");
  add_config_flags(sw, so.cfg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : kExitUsage;
  }

  std::ostream* info = info_stream(err);
  try {
    if (synth->parsed()) {
      spec.validate();
      const auto scenes = generate_scenes(spec, count);
      write_scene_dir(synth_out, scenes, spec.lidar);
      out << "wrote " << scenes.size() << " frames to " << synth_out << "\n";
      return 0;
    }
    if (init->parsed()) {
      const SceneSet set = load_inputs(init_in);
      init_opts.pnp.seed = init_opts.seed;
      const PosedScene& s = set.scenes.front();
      const InitialCalibration ic =
          initial_calibration(s.cloud, s.image, s.K, set.lidar, init_opts);
      out << "shift " << ic.registration.dx << " " << ic.registration.dy << " mi "
          << fmt(ic.registration.mi) << " inliers " << ic.inliers << "/" << ic.correspondences
          << "\n";
      std::optional<RigidTransform> ref = set.reference;
      if (!init_ref.empty()) ref = read_transform(init_ref);
      if (ref) {
        const PoseError e = pose_error(ic.transform, *ref);
        out << "rot_deg " << fmt(e.rot_deg) << " trans_m " << fmt(e.trans_m) << "\n";
      }
      if (!init_out.empty()) write_transform(ic.transform, init_out);
      return 0;
    }
    if (cal->parsed()) {
      const SceneSet set = load_inputs(cal_in);
      CalibrateInputs in;
      in.scenes = set.scenes;
      in.lidar = set.lidar;
      in.reference = set.reference;
      if (!cal_ref.empty()) in.reference = read_transform(cal_ref);
      if (!cal_init.empty()) in.init_transform = read_transform(cal_init);
      cfg.seed = cal_seed;
      if (log_level() >= 2 && cfg.log_every == 0) cfg.log_every = 100;
      in.cfg = cfg;
      in.init.seed = cal_seed;
      in.init.pnp.seed = cal_seed;
      in.out = cal_out;
      const CalibrateOutcome o = cmd_calibrate(in, info);
      out << "mi " << fmt(o.file.mi_final) << " iterations " << o.file.iterations
          << (o.file.converged ? " converged" : " max-iters");
      if (o.file.reference_error) {
        out << " rot_deg " << fmt(o.file.reference_error->rot_deg) << " trans_m "
            << fmt(o.file.reference_error->trans_m);
      }
      out << "\n";
      return o.exit_code;
    }
    if (ev->parsed()) {
      RigidTransform T;
      if (!ev_result.empty()) {
        T = read_result(ev_result).transform;
      } else if (!ev_transform.empty()) {
        T = read_transform(ev_transform);
      } else {
        throw InvalidArgument("give --result or --transform");
      }
      RigidTransform ref;
      if (!ev_ref.empty()) {
        ref = read_transform(ev_ref);
      } else if (!ev_scene.empty()) {
        ref = read_transform(fs::path(ev_scene) / "reference.json");
      } else {
        throw InvalidArgument("give --reference or --scene");
      }
      const PoseError e = pose_error(T, ref);
      out << "rot_deg " << fmt(e.rot_deg, 17) << " trans_m " << fmt(e.trans_m, 17) << "\n";
      return 0;
    }
    if (sw->parsed()) {
      so.kind = sw_kind == "frames" ? SweepKind::Frames : SweepKind::Noise;
      so.start = sw_start == "init" ? SweepStart::Initializer : SweepStart::Perturbed;
      if (so.levels.empty()) {
        so.levels = so.kind == SweepKind::Frames ? std::vector<double>{1, 5, 10, 20}
                                                 : std::vector<double>{0, 0.1, 0.2, 0.5};
      }
      const auto rows = cmd_sweep(so, info);
      if (sw_out.empty()) {
        write_sweep_csv(rows, out);
      } else {
        std::ofstream f(sw_out);
        if (!f) throw IoError("cannot write " + sw_out);
        write_sweep_csv(rows, f);
      }
      if (!sw_svg.empty()) {
        std::ofstream f(sw_svg);
        if (!f) throw IoError("cannot write " + sw_svg);
        write_box_plot_svg(rows, f);
      }
      if (info) {
        for (const auto& s : summarize(rows)) {
          *info << "level " << fmt(s.level) << " n " << s.n << " rot mean " << fmt(s.mean_rot, 4)
                << " std " << fmt(s.std_rot, 4) << " trans mean " << fmt(s.mean_trans, 4)
                << "\n";
        }
      }
      return 0;
    }
  } catch (const Error& e) {
    err << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace semcal::cli
