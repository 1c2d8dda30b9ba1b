#pragma once

// Cold-start extrinsic estimate without a prior guess: spherical LiDAR label
// image, camera labels resampled to the LiDAR's angular resolution, exhaustive
// 2D mutual-information registration, label-agreement correspondences and a
// RANSAC-guarded PnP solve.

#include <cstdint>
#include <vector>

#include "semcal/scene.hpp"

namespace semcal {

inline constexpr std::uint16_t kEmptyCell = 0xFFFF;

/// Row-major label grid where kEmptyCell marks cells without data.
struct LabelGrid {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> cells;

  LabelGrid() = default;
  LabelGrid(int width, int height, std::uint16_t fill = kEmptyCell);
  std::uint16_t at(int row, int col) const { return cells[index(row, col)]; }
  std::uint16_t& at(int row, int col) { return cells[index(row, col)]; }
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * width + col;
  }
  std::size_t count_nonempty() const;
  static LabelGrid from_image(const LabelImage& image);
};

struct SphericalImage {
  LabelGrid grid;
  /// Source cloud index per cell, -1 where empty.
  std::vector<int> point_index;
  LidarGeometry geometry;
};

/// Bins each point by elevation and azimuth of `geometry`; the nearest point
/// wins a contested cell. Points outside the vertical FOV are dropped.
SphericalImage spherical_project(const PointCloud& cloud, const LidarGeometry& geometry);

/// Coordinate map between a zoomed grid and the source image it was resampled
/// from. Linear maps scale each axis about pixel centres; angular maps place
/// zoomed cells on a uniform azimuth/elevation lattice of a level pinhole
/// camera.
class ZoomMap {
 public:
  static ZoomMap linear(int src_width, int src_height, int width, int height);
  static ZoomMap angular(const CameraIntrinsics& K, double azimuth_step,
                         double elevation_step);

  int width() const { return width_; }
  int height() const { return height_; }
  int src_width() const { return src_width_; }
  int src_height() const { return src_height_; }

  /// Source pixel (u, v) -> zoomed (column, row), both continuous.
  Eigen::Vector2d zoom(const Eigen::Vector2d& pixel) const;
  /// Inverse of zoom.
  Eigen::Vector2d dezoom(const Eigen::Vector2d& cell) const;

 private:
  enum class Kind { Linear, Angular };
  Kind kind_ = Kind::Linear;
  int width_ = 0, height_ = 0, src_width_ = 0, src_height_ = 0;
  double sx_ = 1, sy_ = 1;
  CameraIntrinsics K_{};
  double az0_ = 0, el0_ = 0, daz_ = 1, del_ = 1;
};

struct ZoomedLabel {
  LabelGrid grid;
  ZoomMap map;
};

/// Nearest-neighbour resampling; cells whose source pixel falls outside the
/// image are empty.
ZoomedLabel zoom_label(const LabelImage& image, const ZoomMap& map);
ZoomedLabel zoom_label(const LabelImage& image, int width, int height);

/// Zoomed dimensions that give the camera the LiDAR's angular resolution:
/// rows follow the vertical FOVs and columns the horizontal ones.
ZoomMap matched_zoom(const CameraIntrinsics& K, const LidarGeometry& geometry);

struct Registration {
  int dx = 0;
  int dy = 0;
  double mi = 0;
  std::size_t overlap = 0;
};

/// Exhaustive search over integer offsets pairing b(r, c) with a(r + dy, c + dx).
/// MI is the plug-in estimate over cells where b is non-empty, with empty a
/// cells counted as one more label. An offset is feasible when the cells
/// non-empty in both grids cover at least `min_overlap` of the smaller grid's
/// area.
/// Ties within 1e-12 go to the smaller |offset|, then the smaller (dx, dy).
Registration register_2d_mi(const LabelGrid& a, const LabelGrid& b,
                            double min_overlap = 0.25);

struct Correspondence {
  Eigen::Vector3d point;
  Eigen::Vector2d pixel;
};

/// Samples `n` distinct overlap cells whose labels agree and maps them back to
/// a cloud point and a source-image pixel. Throws TooFewMatches when fewer
/// than `n` cells agree.
std::vector<Correspondence> extract_correspondences(const SphericalImage& sph,
                                                    const PointCloud& cloud,
                                                    const ZoomedLabel& zoomed,
                                                    const Registration& offset, int n,
                                                    std::uint64_t seed);

struct PnpOptions {
  bool ransac = true;
  int trials = 200;
  double threshold_px = 8.0;
  int min_inliers = 6;
  std::uint64_t seed = 0;
};

struct PnpResult {
  RigidTransform transform;
  std::vector<std::uint8_t> inliers;
  std::size_t num_inliers = 0;
  double rms_px = 0;
};

/// Normalised DLT on all correspondences; throws DegenerateConfiguration.
RigidTransform pnp_dlt(std::span<const Correspondence> corrs, const CameraIntrinsics& K);

/// Gauss-Newton on reprojection error with left-perturbation updates.
RigidTransform refine_pnp(std::span<const Correspondence> corrs,
                          const CameraIntrinsics& K, RigidTransform T,
                          int max_iters = 50);

/// DLT + Gauss-Newton, inside RANSAC when enabled. Needs >= 6 correspondences.
PnpResult solve_pnp(std::span<const Correspondence> corrs, const CameraIntrinsics& K,
                    const PnpOptions& options = {});

struct InitOptions {
  int correspondences = 100;
  double min_overlap = 0.25;
  PnpOptions pnp;
  std::uint64_t seed = 0;
};

struct InitialCalibration {
  RigidTransform transform;
  Registration registration;
  std::size_t correspondences = 0;
  std::size_t inliers = 0;
};

InitialCalibration initial_calibration(const PointCloud& cloud, const LabelImage& image,
                                       const CameraIntrinsics& K,
                                       const LidarGeometry& geometry,
                                       const InitOptions& options = {});

}  // namespace semcal
