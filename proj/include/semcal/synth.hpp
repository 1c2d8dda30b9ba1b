#pragma once

// Deterministic synthetic LiDAR/camera scenes with semantic labels.
//
// A scene is a small world of labelled primitives (ground plane with flat
// patches, yawed boxes, vertical cylinders). The LiDAR scan is ray cast from
// the origin of the LiDAR frame; the label image is ray cast from the camera
// centre through every pixel, with class kSkyClass where nothing is hit.

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <vector>

#include "semcal/scene.hpp"

namespace semcal {

inline constexpr int kSkyClass = 0;
inline constexpr int kGroundClass = 1;

struct GroundPatch {
  Eigen::Vector2d center;
  Eigen::Vector2d half_size;
  double yaw = 0;
  int label = 0;
};

struct Box {
  Eigen::Vector3d center;
  Eigen::Vector3d half_size;
  double yaw = 0;
  int label = 0;
};

struct Cylinder {
  Eigen::Vector2d center;
  double base_z = 0;
  double height = 0;
  double radius = 0;
  int label = 0;
};

struct World {
  bool has_ground = true;
  double ground_z = -1.8;
  int ground_label = kGroundClass;
  std::vector<GroundPatch> patches;
  std::vector<Box> boxes;
  std::vector<Cylinder> cylinders;
};

struct RayHit {
  double range = 0;
  int label = -1;
  bool hit() const { return label >= 0; }
};

/// Nearest intersection along origin + s * dir (dir need not be unit; range is
/// in units of |dir|) with s in (0, max_range].
RayHit raycast(const World& world, const Eigen::Vector3d& origin,
               const Eigen::Vector3d& dir, double max_range);

struct SceneSpec {
  std::uint64_t seed = 0;
  /// Selects the world layout; the extrinsics depend on `seed` only, so all
  /// frames of one seed share the same ground truth.
  int frame_index = 0;
  int num_classes = 20;
  /// Explicit world; a seeded random layout is used when empty.
  std::optional<World> world;
  LidarGeometry lidar;
  CameraIntrinsics camera{320.0, 320.0, 319.5, 179.5, 640, 360};
  /// Random deviation of the camera mount from the nominal forward-looking
  /// pose: rotation angle up to this many degrees, position within a cube of
  /// this half-width.
  double mount_rotation_deg = 5.0;
  /// Nominal camera centre in the LiDAR frame.
  Eigen::Vector3d mount_center{0.2, 0.0, -0.2};
  double mount_translation_m = 0.2;
  double lidar_max_range = 80.0;
  double label_noise_rate = 0.0;

  void validate() const;
};

World random_world(std::uint64_t seed, int frame_index, int num_classes);

/// The LiDAR-to-camera transform a spec's seed draws.
RigidTransform sample_extrinsic(const SceneSpec& spec);

/// Throws EmptyScene if no LiDAR ray hits anything.
PosedScene generate_scene(const SceneSpec& spec);

/// Frames 0..count-1 of the spec's seed.
std::vector<PosedScene> generate_scenes(SceneSpec spec, int count);

/// Reassigns a uniformly random different class to each point and each pixel
/// independently with probability `rate`.
PosedScene corrupt_labels(PosedScene scene, double rate, std::uint64_t seed);

/// Left-multiplies T by a rotation of exactly rot_deg about a random axis and
/// adds a translation of exactly trans_m in a random direction.
RigidTransform perturb_pose(const RigidTransform& T, double rot_deg,
                            double trans_m, std::uint64_t seed);

}  // namespace semcal
