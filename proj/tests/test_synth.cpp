#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "semcal/errors.hpp"
#include "semcal/mine.hpp"
#include "semcal/synth.hpp"

using namespace semcal;

namespace {

SceneSpec small_spec(std::uint64_t seed) {
  SceneSpec spec;
  spec.seed = seed;
  spec.camera = {160.0, 160.0, 159.5, 89.5, 320, 180};
  return spec;
}

double plug_in_mi(const std::vector<int>& a, const std::vector<int>& b, int C) {
  Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(C, C);
  for (std::size_t i = 0; i < a.size(); ++i) joint(a[i], b[i]) += 1;
  return discrete_mutual_information(joint);
}

// Point labels and the labels of the pixels they land on (rounded), for valid
// projections only.
void paired_labels(const PosedScene& s, const RigidTransform& T, std::vector<int>& pl,
                   std::vector<int>& il) {
  pl.clear();
  il.clear();
  const Projection proj = project(s.cloud, T, s.K);
  for (std::size_t i = 0; i < s.cloud.size(); ++i) {
    if (!proj.valid[i]) continue;
    const int u = static_cast<int>(std::lround(proj.pixels[i].x()));
    const int v = static_cast<int>(std::lround(proj.pixels[i].y()));
    pl.push_back(s.cloud.labels[i]);
    il.push_back(s.image.at(v, u));
  }
}

}  // namespace

TEST_CASE("raycast hits the nearest primitive") {
  World w;
  Box b;
  b.center = {10, 0, 0};
  b.half_size = {1, 1, 1};
  b.label = 7;
  w.boxes.push_back(b);
  Cylinder c;
  c.center = {5, 0};
  c.base_z = -1.8;
  c.height = 1.0;
  c.radius = 0.5;
  c.label = 14;
  w.cylinders.push_back(c);

  const RayHit front = raycast(w, Eigen::Vector3d::Zero(), {1, 0, 0}, 100);
  CHECK(front.label == 7);
  CHECK(front.range == doctest::Approx(9.0));
  const RayHit low = raycast(w, {0, 0, -1.5}, {1, 0, 0}, 100);
  CHECK(low.label == 14);
  CHECK(low.range == doctest::Approx(4.5));
  const RayHit down = raycast(w, Eigen::Vector3d::Zero(), {0, 0, -1}, 100);
  CHECK(down.label == kGroundClass);
  CHECK(down.range == doctest::Approx(1.8));
  CHECK_FALSE(raycast(w, Eigen::Vector3d::Zero(), {0, 0, 1}, 100).hit());
  CHECK_FALSE(raycast(w, Eigen::Vector3d::Zero(), {1, 0, 0}, 8.0).hit());
}

TEST_CASE("ground-only world labels every hit as ground") {
  SceneSpec spec = small_spec(3);
  spec.world = World{};
  const PosedScene s = generate_scene(spec);
  for (int l : s.cloud.labels) CHECK(l == kGroundClass);
  std::set<int> seen(s.image.grid().begin(), s.image.grid().end());
  CHECK(seen.count(kGroundClass) == 1);
  for (int l : seen) CHECK((l == kGroundClass || l == kSkyClass));
}

TEST_CASE("empty world is rejected") {
  SceneSpec spec = small_spec(3);
  World w;
  w.has_ground = false;
  spec.world = w;
  CHECK_THROWS_AS(generate_scene(spec), EmptyScene);
}

TEST_CASE("noiseless scenes project label-consistently through the true pose") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const PosedScene s = generate_scene(small_spec(seed));
    std::vector<int> pl, il;
    paired_labels(s, *s.T_true, pl, il);
    REQUIRE(pl.size() > 1000);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < pl.size(); ++i) agree += pl[i] == il[i];
    CHECK(double(agree) / pl.size() >= 0.95);
  }
}

TEST_CASE("every LiDAR row is populated") {
  const PosedScene s = generate_scene(small_spec(4));
  const LidarGeometry lg;
  std::vector<int> rows(lg.channels, 0);
  for (const auto& p : s.cloud.points) {
    const double el = std::atan2(p.z(), p.head<2>().norm());
    const int r = lg.row_of(el);
    REQUIRE(r >= 0);
    ++rows[r];
  }
  for (int r = 0; r < lg.channels; ++r) CHECK(rows[r] > 0);
}

TEST_CASE("generation is deterministic and frames share the extrinsics") {
  const PosedScene a = generate_scene(small_spec(9));
  const PosedScene b = generate_scene(small_spec(9));
  CHECK(a.image == b.image);
  CHECK(a.cloud.labels == b.cloud.labels);
  CHECK(a.cloud.points == b.cloud.points);
  CHECK(a.T_true->matrix() == b.T_true->matrix());

  const auto frames = generate_scenes(small_spec(9), 2);
  CHECK(frames[0].T_true->matrix() == frames[1].T_true->matrix());
  CHECK_FALSE(frames[0].cloud.labels == frames[1].cloud.labels);
  const PosedScene other = generate_scene(small_spec(10));
  CHECK_FALSE(other.T_true->matrix() == a.T_true->matrix());
}

TEST_CASE("corrupt_labels flips the requested fraction to other classes") {
  const PosedScene s = generate_scene(small_spec(5));
  const PosedScene same = corrupt_labels(s, 0.0, 1);
  CHECK(same.cloud.labels == s.cloud.labels);
  CHECK(same.image == s.image);

  const PosedScene noisy = corrupt_labels(s, 0.2, 2);
  REQUIRE(s.cloud.size() >= 40000);
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < s.cloud.size(); ++i) {
    flipped += noisy.cloud.labels[i] != s.cloud.labels[i];
  }
  CHECK(std::abs(double(flipped) / s.cloud.size() - 0.2) < 0.01);
  std::size_t px = 0;
  for (std::size_t i = 0; i < s.image.grid().size(); ++i) {
    px += noisy.image.grid()[i] != s.image.grid()[i];
  }
  CHECK(std::abs(double(px) / s.image.grid().size() - 0.2) < 0.01);

  const PosedScene half = corrupt_labels(s, 0.5, 3);
  std::size_t hf = 0;
  for (std::size_t i = 0; i < s.cloud.size(); ++i) hf += half.cloud.labels[i] != s.cloud.labels[i];
  CHECK(std::abs(double(hf) / s.cloud.size() - 0.5) < 0.01);
  CHECK_THROWS_AS(corrupt_labels(s, 1.0, 1), InvalidArgument);
}

TEST_CASE("perturb_pose applies exact magnitudes") {
  std::mt19937_64 rng(3);
  const RigidTransform T = sample_extrinsic(small_spec(8));
  const RigidTransform same = perturb_pose(T, 0, 0, 4);
  CHECK((same.matrix() - T.matrix()).cwiseAbs().maxCoeff() < 1e-12);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const RigidTransform P = perturb_pose(T, 10, 0.2, seed);
    const double rot = rotation_angle(P.rotation() * T.rotation().transpose()) * 180 / M_PI;
    CHECK(rot == doctest::Approx(10).epsilon(1e-9));
    CHECK((P.translation() - T.translation()).norm() == doctest::Approx(0.2).epsilon(1e-9));
  }
  const RigidTransform p1 = perturb_pose(T, 10, 0, 1);
  const RigidTransform p2 = perturb_pose(T, 10, 0, 2);
  CHECK((p1.rotation() - p2.rotation()).norm() > 1e-3);
}

TEST_CASE("plug-in MI peaks at the true pose") {
  const PosedScene s = generate_scene(small_spec(6));
  std::vector<int> pl, il;
  paired_labels(s, *s.T_true, pl, il);
  const double at_truth = plug_in_mi(pl, il, s.num_classes());
  for (std::uint64_t k = 0; k < 20; ++k) {
    const RigidTransform P = perturb_pose(*s.T_true, 5.0, 0.0, 100 + k);
    paired_labels(s, P, pl, il);
    CHECK(plug_in_mi(pl, il, s.num_classes()) < at_truth);
  }
}
