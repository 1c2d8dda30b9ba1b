#include "semcal/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "semcal/errors.hpp"

namespace semcal {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kEps = 1e-9;

std::uint64_t mix(std::uint64_t x) {
  // splitmix64 finaliser
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return std::mt19937_64(mix(seed ^ mix(a ^ mix(b))));
}

Eigen::Vector2d rotate2(const Eigen::Vector2d& p, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * p.x() - s * p.y(), s * p.x() + c * p.y()};
}

bool inside_patch(const GroundPatch& patch, const Eigen::Vector2d& p) {
  const Eigen::Vector2d local = rotate2(p - patch.center, -patch.yaw);
  return std::abs(local.x()) <= patch.half_size.x() &&
         std::abs(local.y()) <= patch.half_size.y();
}

double hit_box(const Box& box, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  Eigen::Vector3d lo, ld;
  lo << rotate2((o - box.center).head<2>(), -box.yaw), o.z() - box.center.z();
  ld << rotate2(d.head<2>(), -box.yaw), d.z();
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (std::abs(ld[k]) < 1e-15) {
      if (std::abs(lo[k]) > box.half_size[k]) return -1;
      continue;
    }
    double a = (-box.half_size[k] - lo[k]) / ld[k];
    double b = (box.half_size[k] - lo[k]) / ld[k];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return -1;
  }
  return t0 > kEps ? t0 : -1;
}

double hit_cylinder(const Cylinder& cyl, const Eigen::Vector3d& o,
                    const Eigen::Vector3d& d) {
  double best = -1;
  const Eigen::Vector2d oc = o.head<2>() - cyl.center;
  const Eigen::Vector2d dxy = d.head<2>();
  const double a = dxy.squaredNorm();
  if (a > 1e-15) {
    const double b = 2 * oc.dot(dxy);
    const double c = oc.squaredNorm() - cyl.radius * cyl.radius;
    const double disc = b * b - 4 * a * c;
    if (disc >= 0) {
      const double t = (-b - std::sqrt(disc)) / (2 * a);
      const double z = o.z() + t * d.z();
      if (t > kEps && z >= cyl.base_z && z <= cyl.base_z + cyl.height) best = t;
    }
  }
  if (std::abs(d.z()) > 1e-15) {
    const double top = cyl.base_z + cyl.height;
    const double t = (top - o.z()) / d.z();
    if (t > kEps && (best < 0 || t < best)) {
      const Eigen::Vector2d p = oc + t * dxy;
      if (p.squaredNorm() <= cyl.radius * cyl.radius) best = t;
    }
  }
  return best;
}

}  // namespace

RayHit raycast(const World& world, const Eigen::Vector3d& origin,
               const Eigen::Vector3d& dir, double max_range) {
  RayHit best{max_range, -1};
  auto consider = [&](double t, int label) {
    if (t > kEps && t <= best.range) best = {t, label};
  };
  if (world.has_ground && dir.z() < 0) {
    const double t = (world.ground_z - origin.z()) / dir.z();
    if (t > kEps && t <= best.range) {
      const Eigen::Vector2d p = (origin + t * dir).head<2>();
      int label = world.ground_label;
      for (const auto& patch : world.patches) {
        if (inside_patch(patch, p)) {
          label = patch.label;
          break;
        }
      }
      consider(t, label);
    }
  }
  for (const auto& box : world.boxes) {
    const double t = hit_box(box, origin, dir);
    if (t > 0) consider(t, box.label);
  }
  for (const auto& cyl : world.cylinders) {
    const double t = hit_cylinder(cyl, origin, dir);
    if (t > 0) consider(t, cyl.label);
  }
  return best;
}

void SceneSpec::validate() const {
  if (num_classes < 2) throw InvalidArgument("need at least 2 classes");
  if (!(label_noise_rate >= 0 && label_noise_rate < 1)) {
    throw InvalidArgument("label noise rate must lie in [0, 1)");
  }
  if (!(mount_rotation_deg >= 0 && mount_rotation_deg < 90) ||
      !(mount_translation_m >= 0) || !mount_center.allFinite()) {
    throw InvalidArgument("invalid mount perturbation range");
  }
  lidar.validate();
  camera.validate();
}

World random_world(std::uint64_t seed, int frame_index, int num_classes) {
  std::mt19937_64 rng = stream(seed, 0x776f726c64ULL, static_cast<std::uint64_t>(frame_index));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  auto count = [&](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };
  auto label_in = [&](int lo, int hi) {
    return std::min(count(lo, hi), num_classes - 1);
  };
  // Azimuth biased towards the forward half-plane the camera looks at.
  auto azimuth = [&]() {
    return u01(rng) < 0.75 ? uniform(-55, 55) * kDeg : uniform(-180, 180) * kDeg;
  };

  World world;
  world.ground_label = std::min(kGroundClass, num_classes - 1);
  const double gz = world.ground_z;

  for (int i = count(5, 9); i > 0; --i) {
    GroundPatch p;
    const double r = uniform(3, 22), a = uniform(-50, 50) * kDeg;
    p.center = {r * std::cos(a), r * std::sin(a)};
    p.half_size = {uniform(1.0, 5.0), uniform(0.5, 2.5)};
    p.yaw = uniform(-std::numbers::pi, std::numbers::pi);
    p.label = label_in(2, 5);
    world.patches.push_back(p);
  }
  for (int i = count(8, 14); i > 0; --i) {
    Box b;
    const double r = uniform(5, 30), a = azimuth();
    b.half_size = {uniform(0.8, 2.5), uniform(0.8, 2.5), uniform(0.6, 2.0)};
    b.center = {r * std::cos(a), r * std::sin(a), gz + b.half_size.z()};
    b.yaw = uniform(-std::numbers::pi, std::numbers::pi);
    b.label = label_in(6, 13);
    world.boxes.push_back(b);
  }
  for (int i = count(4, 7); i > 0; --i) {
    Box b;
    const double r = uniform(32, 48), a = azimuth();
    b.half_size = {uniform(3, 8), uniform(3, 8), uniform(3, 7)};
    b.center = {r * std::cos(a), r * std::sin(a), gz + b.half_size.z()};
    b.yaw = uniform(-std::numbers::pi, std::numbers::pi);
    b.label = label_in(6, 13);
    world.boxes.push_back(b);
  }
  for (int i = count(8, 14); i > 0; --i) {
    Cylinder c;
    const double r = uniform(4, 25), a = azimuth();
    c.center = {r * std::cos(a), r * std::sin(a)};
    c.base_z = gz;
    c.height = uniform(2, 7);
    c.radius = uniform(0.1, 0.6);
    c.label = label_in(14, 19);
    world.cylinders.push_back(c);
  }
  return world;
}

RigidTransform sample_extrinsic(const SceneSpec& spec) {
  std::mt19937_64 rng = stream(spec.seed, 0x6d6f756e74ULL);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01;
  // Nominal mount: camera x = -LiDAR y, camera y = -LiDAR z, camera z = LiDAR x.
  Eigen::Matrix3d R0;
  R0 << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  Eigen::Vector3d axis{n01(rng), n01(rng), n01(rng)};
  axis.normalize();
  const double angle = spec.mount_rotation_deg * kDeg * u01(rng);
  const Eigen::Matrix3d R = Eigen::AngleAxisd(angle, axis).toRotationMatrix() * R0;
  const double m = spec.mount_translation_m;
  const Eigen::Vector3d centre =
      spec.mount_center +
      m * Eigen::Vector3d{2 * u01(rng) - 1, 2 * u01(rng) - 1, 2 * u01(rng) - 1};
  return RigidTransform::from_nearest_rotation(R, -R * centre);
}

PosedScene generate_scene(const SceneSpec& spec) {
  spec.validate();
  const World world =
      spec.world ? *spec.world : random_world(spec.seed, spec.frame_index, spec.num_classes);
  const RigidTransform T = sample_extrinsic(spec);

  PosedScene scene;
  scene.K = spec.camera;
  scene.T_true = T;

  const LidarGeometry& lg = spec.lidar;
  for (int r = 0; r < lg.channels; ++r) {
    const double el = lg.row_elevation(r);
    for (int c = 0; c < lg.ring_points; ++c) {
      const double az = lg.col_azimuth(c);
      const Eigen::Vector3d dir(std::cos(el) * std::cos(az),
                                std::cos(el) * std::sin(az), std::sin(el));
      const RayHit hit = raycast(world, Eigen::Vector3d::Zero(), dir, spec.lidar_max_range);
      if (!hit.hit()) continue;
      scene.cloud.points.push_back(hit.range * dir);
      scene.cloud.labels.push_back(hit.label);
    }
  }
  if (scene.cloud.points.empty()) {
    throw EmptyScene("no LiDAR ray intersects the world");
  }

  const CameraIntrinsics& K = spec.camera;
  const Eigen::Matrix3d Rt = T.rotation().transpose();
  const Eigen::Vector3d centre = -(Rt * T.translation());
  std::vector<std::uint16_t> grid(static_cast<std::size_t>(K.width) * K.height);
  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      const Eigen::Vector3d ray((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
      const RayHit hit = raycast(world, centre, Rt * ray, 1e3);
      grid[static_cast<std::size_t>(v) * K.width + u] =
          static_cast<std::uint16_t>(hit.hit() ? hit.label : kSkyClass);
    }
  }
  scene.image = LabelImage(K.width, K.height, spec.num_classes, std::move(grid));
  scene.cloud.validate(spec.num_classes);

  if (spec.label_noise_rate > 0) {
    scene = corrupt_labels(std::move(scene), spec.label_noise_rate,
                           mix(spec.seed ^ mix(0x6e6f697365ULL + spec.frame_index)));
  }
  return scene;
}

std::vector<PosedScene> generate_scenes(SceneSpec spec, int count) {
  std::vector<PosedScene> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    spec.frame_index = k;
    out.push_back(generate_scene(spec));
  }
  return out;
}

PosedScene corrupt_labels(PosedScene scene, double rate, std::uint64_t seed) {
  if (!(rate >= 0 && rate < 1)) {
    throw InvalidArgument("corruption rate must lie in [0, 1)");
  }
  if (rate == 0) return scene;
  const int C = scene.num_classes();
  std::mt19937_64 rng(mix(seed));
  std::bernoulli_distribution flip(rate);
  std::uniform_int_distribution<int> other(1, C - 1);
  for (int& l : scene.cloud.labels) {
    if (flip(rng)) l = (l + other(rng)) % C;
  }
  const int W = scene.image.width();
  for (int r = 0; r < scene.image.height(); ++r) {
    for (int c = 0; c < W; ++c) {
      if (flip(rng)) {
        auto& cell = scene.image.at(r, c);
        cell = static_cast<std::uint16_t>((cell + other(rng)) % C);
      }
    }
  }
  return scene;
}

RigidTransform perturb_pose(const RigidTransform& T, double rot_deg,
                            double trans_m, std::uint64_t seed) {
  if (!(rot_deg >= 0 && rot_deg < 180) || !(trans_m >= 0)) {
    throw InvalidArgument("perturbation must satisfy 0 <= rot < 180 deg, trans >= 0");
  }
  std::mt19937_64 rng(mix(seed ^ 0x7065727475ULL));
  std::normal_distribution<double> n01;
  Eigen::Vector3d axis{n01(rng), n01(rng), n01(rng)};
  axis.normalize();
  Eigen::Vector3d dir{n01(rng), n01(rng), n01(rng)};
  dir.normalize();
  const Eigen::Matrix3d dR = Eigen::AngleAxisd(rot_deg * kDeg, axis).toRotationMatrix();
  return RigidTransform::from_nearest_rotation(dR * T.rotation(),
                                               T.translation() + trans_m * dir);
}

}  // namespace semcal
