#include "semcal/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "semcal/errors.hpp"

namespace semcal {

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;
}

double LidarGeometry::row_elevation(int row) const {
  const double step = vertical_fov_deg() / channels;
  return (fov_up_deg - (row + 0.5) * step) * kDeg;
}

double LidarGeometry::col_azimuth(int col) const {
  return std::numbers::pi - (col + 0.5) * 2.0 * std::numbers::pi / ring_points;
}

int LidarGeometry::row_of(double elevation) const {
  const double f = (fov_up_deg - elevation / kDeg) / vertical_fov_deg();
  if (!(f >= 0.0 && f < 1.0)) return -1;
  return std::min(static_cast<int>(f * channels), channels - 1);
}

int LidarGeometry::col_of(double azimuth) const {
  const double f = (std::numbers::pi - azimuth) / (2.0 * std::numbers::pi);
  int col = static_cast<int>(std::floor(f * ring_points));
  col %= ring_points;
  if (col < 0) col += ring_points;
  return col;
}

void LidarGeometry::validate() const {
  if (channels < 8 || ring_points < 8) {
    throw InvalidArgument("LiDAR needs at least 8 channels and 8 points per ring");
  }
  if (!(vertical_fov_deg() > 0) || fov_up_deg > 90 || fov_down_deg < -90) {
    throw InvalidArgument("invalid LiDAR vertical field of view");
  }
}

}  // namespace semcal
