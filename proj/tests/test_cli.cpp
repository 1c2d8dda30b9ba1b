#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <unistd.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "commands.hpp"
#include "semcal/errors.hpp"

using namespace semcal;
using namespace semcal::cli;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("semcal_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static inline int counter = 0;
};

SceneSpec small_spec(std::uint64_t seed) {
  SceneSpec spec;
  spec.seed = seed;
  spec.camera = {160.0, 160.0, 159.5, 89.5, 320, 180};
  return spec;
}

int run_args(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "semcal");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  return code;
}

std::string strip_wall_time(const std::string& json) {
  std::istringstream in(json);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.find("\"wall_time\"") == std::string::npos) kept += line + "\n";
  }
  return kept;
}

SweepOptions quick_sweep() {
  SweepOptions o;
  o.kind = SweepKind::Noise;
  o.levels = {0.0};
  o.runs = 3;
  o.frames = 1;
  o.scene = small_spec(0);
  o.cfg.batch_size = 512;
  o.cfg.max_iters = 40;
  return o;
}

}  // namespace

TEST_CASE("a sweep with three runs at one level gives three rows") {
  const auto rows = cmd_sweep(quick_sweep());
  REQUIRE(rows.size() == 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].kind == "noise");
    CHECK(rows[i].level == 0.0);
    CHECK(rows[i].seed == i);
    CHECK(std::isfinite(rows[i].rot_deg));
  }
  std::ostringstream csv;
  write_sweep_csv(rows, csv);
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "kind,level,seed,rot_deg,trans_m,mi_final");
  int n = 0;
  while (std::getline(in, line)) {
    CHECK(line.rfind("noise,0," + std::to_string(n) + ",", 0) == 0);
    ++n;
  }
  CHECK(n == 3);
}

TEST_CASE("parallel sweeps match serial ones") {
  SweepOptions o = quick_sweep();
  o.kind = SweepKind::Frames;
  o.levels = {1, 2};
  const auto serial = cmd_sweep(o);
  o.jobs = 3;
  const auto parallel = cmd_sweep(o);
  REQUIRE(serial.size() == 6);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].level == parallel[i].level);
    CHECK(serial[i].seed == parallel[i].seed);
    CHECK(serial[i].rot_deg == parallel[i].rot_deg);
    CHECK(serial[i].mi_final == parallel[i].mi_final);
  }
}

TEST_CASE("sweep arguments are validated") {
  SweepOptions o = quick_sweep();
  o.runs = 2;
  CHECK_THROWS_AS(cmd_sweep(o), InvalidArgument);
  o = quick_sweep();
  o.levels.clear();
  CHECK_THROWS_AS(cmd_sweep(o), InvalidArgument);
  o = quick_sweep();
  o.levels = {1.0};
  CHECK_THROWS_AS(cmd_sweep(o), InvalidArgument);
  o = quick_sweep();
  o.kind = SweepKind::Frames;
  o.levels = {2.5};
  CHECK_THROWS_AS(cmd_sweep(o), InvalidArgument);
}

TEST_CASE("summaries and box plots") {
  std::vector<SweepRow> rows;
  for (int i = 0; i < 4; ++i) rows.push_back({"frames", 1, std::uint64_t(i), 1.0 + i, 0.1, 0});
  for (int i = 0; i < 4; ++i) rows.push_back({"frames", 10, std::uint64_t(i), 0.5, 0.2, 0});
  const auto s = summarize(rows);
  REQUIRE(s.size() == 2);
  CHECK(s[0].level == 1);
  CHECK(s[0].mean_rot == doctest::Approx(2.5));
  CHECK(s[0].std_rot == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(s[0].median_rot == doctest::Approx(2.5));
  CHECK(s[1].std_rot == 0.0);
  CHECK(s[1].mean_trans == doctest::Approx(0.2));

  std::ostringstream svg;
  write_box_plot_svg(rows, svg);
  const std::string text = svg.str();
  CHECK(text.rfind("<svg", 0) == 0);
  CHECK(text.find("</svg>") != std::string::npos);
  std::size_t boxes = 0;
  for (auto p = text.find("fill=\"#9ecae1\""); p != std::string::npos;
       p = text.find("fill=\"#9ecae1\"", p + 1)) {
    ++boxes;
  }
  CHECK(boxes == 2);
}

TEST_CASE("calibrate skips initialization when given a start transform") {
  CalibrateInputs in;
  in.scenes = generate_scenes(small_spec(2), 1);
  in.init_transform = perturb_pose(*in.scenes[0].T_true, 1.0, 0.05, 3);
  in.cfg.batch_size = 512;
  in.cfg.max_iters = 30;
  const CalibrateOutcome o = cmd_calibrate(in);
  CHECK_FALSE(o.initialization);
  CHECK(o.exit_code == kExitMaxIters);
  CHECK_FALSE(o.file.reference_error);

  in.init_transform.reset();
  in.reference = in.scenes[0].T_true;
  const CalibrateOutcome cold = cmd_calibrate(in);
  REQUIRE(cold.initialization);
  CHECK(cold.file.reference_error);
}

TEST_CASE("calibrate output is reproducible apart from the wall time") {
  TempDir tmp;
  CalibrateInputs in;
  in.scenes = generate_scenes(small_spec(5), 2);
  in.reference = in.scenes[0].T_true;
  in.cfg.batch_size = 1024;
  in.cfg.max_iters = 80;
  in.cfg.seed = 11;
  in.out = tmp.path / "a.json";
  cmd_calibrate(in);
  in.out = tmp.path / "b.json";
  cmd_calibrate(in);
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  CHECK(strip_wall_time(slurp(tmp.path / "a.json")) == strip_wall_time(slurp(tmp.path / "b.json")));
}

TEST_CASE("command line: synth, calibrate, eval") {
  TempDir tmp;
  const std::string dir = (tmp.path / "scene").string();
  CHECK(run_args({"synth", "--out", dir, "--seed", "6", "--count", "2"}) == 0);
  CHECK(fs::exists(tmp.path / "scene" / "reference.json"));

  const std::string result = (tmp.path / "r.json").string();
  std::string text;
  CHECK(run_args({"calibrate", "--scene", dir, "--seed", "1", "--out", result}, &text) ==
        kExitConverged);
  const CalibrationFile f = read_result(result);
  REQUIRE(f.reference_error);
  CHECK(f.reference_error->rot_deg < 1.0);
  CHECK(f.reference_error->trans_m < 0.1);
  CHECK(text.find("converged") != std::string::npos);

  CHECK(run_args({"eval", "--result", result, "--scene", dir}, &text) == 0);
  CHECK(text.rfind("rot_deg ", 0) == 0);

  const std::string ref = (tmp.path / "scene" / "reference.json").string();
  CHECK(run_args({"calibrate", "--scene", dir, "--init-transform", ref, "--max-iters", "20",
                  "--batch-size", "256", "--out", result}) == kExitMaxIters);
}

TEST_CASE("command line: error exit codes") {
  TempDir tmp;
  // LiDAR returns only from behind the vehicle: the camera sees none of them.
  auto scenes = generate_scenes(small_spec(7), 1);
  PointCloud rear;
  for (std::size_t i = 0; i < scenes[0].cloud.size(); ++i) {
    const auto& p = scenes[0].cloud.points[i];
    if (std::abs(std::atan2(p.y(), p.x())) > 150.0 * std::numbers::pi / 180.0) {
      rear.points.push_back(p);
      rear.labels.push_back(scenes[0].cloud.labels[i]);
    }
  }
  scenes[0].cloud = rear;
  const fs::path dir = tmp.path / "rear";
  write_scene_dir(dir, scenes, LidarGeometry{});
  CHECK(run_args({"calibrate", "--scene", dir.string(), "--out",
                  (tmp.path / "r.json").string()}) ==
        static_cast<int>(ErrorKind::InsufficientOverlap));

  CHECK(run_args({"calibrate", "--frames", dir.string() + "/frames"}) == kExitUsage);
  CHECK(run_args({"calibrate", "--scene", (tmp.path / "missing").string()}) ==
        static_cast<int>(ErrorKind::IoError));
  CHECK(run_args({"eval", "--result", (tmp.path / "none.json").string(), "--reference",
                  (tmp.path / "none.json").string()}) == static_cast<int>(ErrorKind::IoError));
  CHECK(run_args({"sweep", "--runs", "2"}) == static_cast<int>(ErrorKind::InvalidArgument));
  CHECK(run_args({"bogus"}) == kExitUsage);
  CHECK(run_args({"synth", "--help"}) == 0);
}

TEST_CASE("log level parsing") {
  ::setenv("SEMCAL_LOG", "quiet", 1);
  CHECK(log_level() == 0);
  ::setenv("SEMCAL_LOG", "debug", 1);
  CHECK(log_level() == 2);
  ::setenv("SEMCAL_LOG", "1", 1);
  CHECK(log_level() == 1);
  ::unsetenv("SEMCAL_LOG");
  CHECK(log_level() == 1);
}
