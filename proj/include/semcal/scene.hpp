#pragma once

#include <optional>

#include "semcal/geometry.hpp"
#include "semcal/sampling.hpp"

namespace semcal {

/// A spinning LiDAR's scan pattern. Rows run from the top elevation down,
/// columns from azimuth +180 deg (behind, left side) through 0 (forward) to
/// -180 deg, so the forward direction sits in the middle column.
struct LidarGeometry {
  int channels = 64;
  int ring_points = 800;
  double fov_up_deg = 2.0;
  double fov_down_deg = -24.8;

  double vertical_fov_deg() const { return fov_up_deg - fov_down_deg; }
  /// Elevation (radians) at the centre of a row.
  double row_elevation(int row) const;
  /// Azimuth (radians) at the centre of a column.
  double col_azimuth(int col) const;
  /// Row/column of a direction; row is -1 outside the vertical FOV.
  int row_of(double elevation) const;
  int col_of(double azimuth) const;
  void validate() const;
};

/// One LiDAR frame paired with one camera label image.
struct PosedScene {
  PointCloud cloud;
  LabelImage image;
  CameraIntrinsics K;
  /// Ground truth LiDAR-to-camera transform, when known.
  std::optional<RigidTransform> T_true;

  int num_classes() const { return image.num_classes(); }
};

}  // namespace semcal
