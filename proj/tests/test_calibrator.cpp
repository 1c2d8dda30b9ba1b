#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numbers>
#include <regex>
#include <sstream>

#include "semcal/calibrator.hpp"
#include "semcal/errors.hpp"
#include "semcal/synth.hpp"

using namespace semcal;

namespace {

std::vector<PosedScene> small_scenes(std::uint64_t seed, int frames) {
  SceneSpec spec;
  spec.seed = seed;
  spec.camera = {160.0, 160.0, 159.5, 89.5, 320, 180};
  return generate_scenes(spec, frames);
}

CalibConfig quick_config(std::uint64_t seed, int iters) {
  CalibConfig cfg;
  cfg.seed = seed;
  cfg.batch_size = 2048;
  cfg.max_iters = iters;
  return cfg;
}

}  // namespace

TEST_CASE("pose_error examples") {
  const RigidTransform I = RigidTransform::identity();
  const PoseError same = pose_error(I, I);
  CHECK(same.rot_deg == 0.0);
  CHECK(same.trans_m == 0.0);

  const Eigen::Matrix3d yaw =
      Eigen::AngleAxisd(10 * std::numbers::pi / 180, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const PoseError y = pose_error(RigidTransform(yaw, Eigen::Vector3d::Zero()), I);
  CHECK(y.rot_deg == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(y.trans_m == 0.0);

  const PoseError t = pose_error(RigidTransform(Eigen::Matrix3d::Identity(), {0.3, 0.4, 0}), I);
  CHECK(t.rot_deg == 0.0);
  CHECK(t.trans_m == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("config validation") {
  CalibConfig cfg;
  cfg.batch_size = 32;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.lr_pose = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  const auto scenes = small_scenes(1, 1);
  CHECK_THROWS_AS(calibrate({}, *scenes[0].T_true, {}), InvalidArgument);
}

TEST_CASE("starting at the truth stays at the truth") {
  const auto scenes = small_scenes(2, 3);
  const RigidTransform truth = *scenes[0].T_true;
  const CalibrationResult r = calibrate(scenes, truth, quick_config(2, 600));
  const PoseError e = pose_error(r.transform, truth);
  CHECK(e.rot_deg < 0.2);
  CHECK(e.trans_m < 0.05);
  CHECK((exp_se3(r.v_final).matrix() - r.transform.matrix()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(r.iterations_run == static_cast<int>(r.mi_trace.size()));
  CHECK(r.best_mi == *std::max_element(r.mi_trace.begin(), r.mi_trace.end()));
  CHECK(r.mi_trace[r.best_iteration] == r.best_mi);
}

TEST_CASE("a perturbed start is pulled back") {
  const auto scenes = small_scenes(3, 3);
  const RigidTransform truth = *scenes[0].T_true;
  const RigidTransform start = perturb_pose(truth, 3.0, 0.2, 5);
  const CalibrationResult r = calibrate(scenes, start, quick_config(3, 1500));
  const PoseError e = pose_error(r.transform, truth);
  CHECK(e.rot_deg < 0.5);
  CHECK(e.trans_m < 0.05);
}

TEST_CASE("runs are deterministic") {
  const auto scenes = small_scenes(4, 2);
  const RigidTransform start = perturb_pose(*scenes[0].T_true, 2.0, 0.1, 1);
  const CalibrationResult a = calibrate(scenes, start, quick_config(9, 120));
  const CalibrationResult b = calibrate(scenes, start, quick_config(9, 120));
  CHECK(a.mi_trace == b.mi_trace);
  CHECK(a.transform.matrix() == b.transform.matrix());
  const CalibrationResult c = calibrate(scenes, start, quick_config(10, 120));
  CHECK_FALSE(a.mi_trace == c.mi_trace);
}

TEST_CASE("the marginal gradient path can be switched off") {
  const auto scenes = small_scenes(5, 2);
  const RigidTransform start = perturb_pose(*scenes[0].T_true, 2.0, 0.1, 2);
  CalibConfig with = quick_config(1, 50), without = with;
  without.marginal_grad = false;
  Calibrator a(scenes, start, with), b(scenes, start, without);
  for (int i = 0; i < 30; ++i) {
    a.step();
    b.step();
  }
  // Identical batches and network updates; only the pose step differs.
  CHECK(a.network().parameters() != b.network().parameters());
  CHECK(a.transform().matrix() != b.transform().matrix());
}

TEST_CASE("the truth is a near-stationary point of the trained estimate") {
  const auto scenes = small_scenes(6, 3);
  const RigidTransform truth = *scenes[0].T_true;
  CalibConfig cfg = quick_config(6, 1);
  cfg.batch_size = 4096;
  cfg.lr_pose = 1e-12;
  Calibrator calib(scenes, truth, cfg);
  for (int i = 0; i < 400; ++i) calib.step();

  auto norm_at = [&](const RigidTransform& T) {
    Vector6d g = Vector6d::Zero();
    for (int k = 0; k < 4; ++k) g += calib.probe(T).grad_pose;
    return (g / 4).norm();
  };
  const double at_truth = norm_at(truth);
  std::vector<double> others;
  for (std::uint64_t k = 0; k < 100; ++k) {
    others.push_back(norm_at(perturb_pose(truth, 1.0 + 0.02 * k, 0.05, 300 + k)));
  }
  std::sort(others.begin(), others.end());
  CHECK(at_truth <= others[9]);
}

TEST_CASE("a camera looking away from the points fails with NoValidPoints") {
  auto scenes = small_scenes(7, 1);
  PointCloud front;
  for (std::size_t i = 0; i < scenes[0].cloud.size(); ++i) {
    if (scenes[0].cloud.points[i].x() > 1.0) {
      front.points.push_back(scenes[0].cloud.points[i]);
      front.labels.push_back(scenes[0].cloud.labels[i]);
    }
  }
  scenes[0].cloud = front;
  const Eigen::Matrix3d flip =
      Eigen::AngleAxisd(std::numbers::pi, Eigen::Vector3d::UnitY()).toRotationMatrix();
  const RigidTransform away(flip * scenes[0].T_true->rotation(), scenes[0].T_true->translation());
  CHECK_THROWS_AS(calibrate(scenes, away, quick_config(1, 200)), NoValidPoints);
}

TEST_CASE("progress lines report errors against a reference") {
  const auto scenes = small_scenes(8, 1);
  CalibConfig cfg = quick_config(1, 20);
  cfg.log_every = 10;
  std::ostringstream log;
  calibrate(scenes, *scenes[0].T_true, cfg, scenes[0].T_true, &log);
  const std::regex line(R"(iter \d+ mi \S+ rot_err \S+ trans_err \S+)");
  std::istringstream in(log.str());
  std::string s;
  int lines = 0;
  while (std::getline(in, s)) {
    CHECK(std::regex_match(s, line));
    ++lines;
  }
  CHECK(lines == 2);
}
