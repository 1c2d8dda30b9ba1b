#pragma once

// File formats.
//
// Point clouds
//   text    one point per line, "x y z label"; blank lines and lines starting
//           with '#' are skipped.
//   binary  little-endian float32 records (x, y, z, label), 16 bytes each.
//   kitti   little-endian float32 records (x, y, z, intensity) plus a sidecar
//           of little-endian uint32 per point whose low 16 bits are the label.
// Label images
//   PGM (P2/P5, maxval up to 65535) or single-channel PNG, 8 or 16 bit; the
//   pixel value is the class ID.
// JSON
//   intrinsics {"fx","fy","cx","cy","width","height"}, transforms
//   {"matrix": 4x4 rows}, LiDAR geometry {"channels","ring_points",
//   "fov_up_deg","fov_down_deg"} and calibration results (schema_version 1).

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "semcal/calibrator.hpp"
#include "semcal/scene.hpp"

namespace semcal {

namespace fs = std::filesystem;

enum class CloudFormat { Auto, Text, Binary, Kitti };

/// Auto picks Kitti when a sidecar is given, Binary for ".bin" and Text
/// otherwise. Labels must be below num_classes when it is positive.
PointCloud read_point_cloud(const fs::path& path, CloudFormat format = CloudFormat::Auto,
                            const std::optional<fs::path>& label_sidecar = std::nullopt,
                            int num_classes = 0);
/// Text is written with 17 significant digits; Binary rounds to float32.
void write_point_cloud(const PointCloud& cloud, const fs::path& path,
                       CloudFormat format = CloudFormat::Auto);

/// num_classes defaults to max(2, largest label + 1).
LabelImage read_label_image(const fs::path& path, int num_classes = 0);
/// ".png" writes PNG, anything else binary PGM; 16 bit when C > 256.
void write_label_image(const LabelImage& image, const fs::path& path);

CameraIntrinsics read_intrinsics(const fs::path& path);
void write_intrinsics(const CameraIntrinsics& K, const fs::path& path);

RigidTransform read_transform(const fs::path& path);
void write_transform(const RigidTransform& T, const fs::path& path);

LidarGeometry read_lidar_geometry(const fs::path& path);
void write_lidar_geometry(const LidarGeometry& geometry, const fs::path& path);

inline constexpr int kSchemaVersion = 1;

struct CalibrationFile {
  RigidTransform transform;
  Se3Params v;
  CameraIntrinsics intrinsics;
  std::uint64_t seed = 0;
  std::string config_hash;
  double mi_final = 0;
  int iterations = 0;
  bool converged = false;
  double wall_time = 0;
  std::vector<double> mi_trace;
  /// Present iff a reference transform was supplied.
  std::optional<PoseError> reference_error;
};

CalibrationFile make_calibration_file(const CalibrationResult& result,
                                      const CameraIntrinsics& K, const CalibConfig& cfg,
                                      const std::optional<RigidTransform>& reference);

/// FNV-1a over a canonical rendering of every config field.
std::string config_hash(const CalibConfig& cfg);

/// Numbers carry 17 significant digits. Throws IoError.
void write_result(const CalibrationFile& file, const fs::path& path);
std::string result_to_json(const CalibrationFile& file);
/// Throws IoError, ParseError, or SchemaVersionError for a missing field or a
/// different schema version.
CalibrationFile read_result(const fs::path& path);

/// A scene directory as written by the synth command:
///   intrinsics.json, lidar.json, frames/NNNNNN.bin, images/NNNNNN.png and,
///   for synthetic data, reference.json.
struct SceneSet {
  std::vector<PosedScene> scenes;
  LidarGeometry lidar;
  std::optional<RigidTransform> reference;
};

void write_scene_dir(const fs::path& dir, const std::vector<PosedScene>& scenes,
                     const LidarGeometry& lidar);
SceneSet read_scene_dir(const fs::path& dir, int num_classes = 0);

/// Pairs clouds with images by position. Optional sidecars follow the clouds.
/// When num_classes is 0 every frame gets max(2, largest label anywhere + 1).
std::vector<PosedScene> load_scenes(const std::vector<fs::path>& clouds,
                                    const std::vector<fs::path>& images,
                                    const std::vector<fs::path>& sidecars,
                                    const CameraIntrinsics& K, int num_classes = 0);

/// Expands a file, a directory (all regular files) or a pattern with '*' and
/// '?' in its last component; results are sorted.
std::vector<fs::path> expand_paths(const std::string& pattern);

}  // namespace semcal
