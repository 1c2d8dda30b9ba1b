#pragma once

// SE(3) exponential coordinates, pinhole projection and projection Jacobians.
//
// Generator ordering used everywhere in the library:
//   B0..B2  translation along x, y, z
//   B3..B5  rotation about x, y, z
// so a 6-vector v = (rho, omega) maps to exp(sum_i v_i B_i).

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <span>
#include <vector>

namespace semcal {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix26d = Eigen::Matrix<double, 2, 6>;
using Matrix36d = Eigen::Matrix<double, 3, 6>;

/// Points closer than this along the camera axis are never projected.
inline constexpr double kMinDepth = 0.1;

/// Exponential coordinates of a rigid transform, restricted to the principal
/// branch (rotation angle strictly below pi).
class Se3Params {
 public:
  Se3Params() : v_(Vector6d::Zero()) {}
  /// Throws NonFinite or RotationOutOfRange.
  explicit Se3Params(const Vector6d& v);

  const Vector6d& vector() const { return v_; }
  double operator[](int i) const { return v_[i]; }
  Eigen::Vector3d translation_part() const { return v_.head<3>(); }
  Eigen::Vector3d rotation_part() const { return v_.tail<3>(); }

 private:
  Vector6d v_;
};

class RigidTransform {
 public:
  RigidTransform()
      : R_(Eigen::Matrix3d::Identity()), t_(Eigen::Vector3d::Zero()) {}
  /// Validates R^T R = I and det R = 1 within 1e-9; throws InvalidArgument.
  RigidTransform(const Eigen::Matrix3d& R, const Eigen::Vector3d& t);

  static RigidTransform identity() { return {}; }
  /// Projects an arbitrary 3x3 onto the nearest rotation before constructing.
  static RigidTransform from_nearest_rotation(const Eigen::Matrix3d& M,
                                              const Eigen::Vector3d& t);
  /// Throws InvalidArgument unless the bottom row is (0, 0, 0, 1).
  static RigidTransform from_matrix(const Eigen::Matrix4d& H);

  const Eigen::Matrix3d& rotation() const { return R_; }
  const Eigen::Vector3d& translation() const { return t_; }
  Eigen::Matrix4d matrix() const;

  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const {
    return R_ * p + t_;
  }
  RigidTransform operator*(const RigidTransform& other) const;
  RigidTransform inverse() const;

 private:
  Eigen::Matrix3d R_;
  Eigen::Vector3d t_;
};

struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  /// Throws InvalidArgument when fx, fy <= 0 or the principal point lies
  /// outside the image.
  void validate() const;
  Eigen::Matrix3d matrix() const;
};

struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<int> labels;

  std::size_t size() const { return points.size(); }
  /// Equal non-zero lengths, finite coordinates and labels in [0, num_classes).
  void validate(int num_classes) const;
};

struct Projection {
  std::vector<Eigen::Vector2d> pixels;
  std::vector<std::uint8_t> valid;

  std::size_t num_valid() const;
};

Eigen::Matrix3d skew(const Eigen::Vector3d& w);

/// Closed-form exp(sum v_i B_i): Rodrigues rotation and the matching V matrix
/// for the translation.
RigidTransform exp_se3(const Se3Params& v);
/// Unchecked variant for tangent-space increments; same branch restriction.
RigidTransform exp_se3(const Vector6d& v);
/// Inverse of exp_se3. Throws RotationOutOfRange at angles >= pi - 1e-6.
Se3Params log_se3(const RigidTransform& T);

/// 4x4 generator matrix B_i.
Eigen::Matrix4d se3_generator(int i);

/// Pinhole projection; a point is valid iff its camera depth exceeds kMinDepth
/// and the pixel lies in [0, width-1] x [0, height-1].
Projection project(std::span<const Eigen::Vector3d> points,
                   const RigidTransform& T, const CameraIntrinsics& K);
Projection project(const PointCloud& cloud, const RigidTransform& T,
                   const CameraIntrinsics& K);

/// d(u, v) / d(epsilon) for the left perturbation exp(epsilon) * T, evaluated
/// at a single camera-frame point.
Matrix26d pixel_jacobian(const Eigen::Vector3d& p_cam,
                         const CameraIntrinsics& K);

/// Per-point 2x6 Jacobians of the projected pixel with respect to a left
/// perturbation of exp_se3(v). Rows of invalid points are zero.
std::vector<Matrix26d> project_jacobian(std::span<const Eigen::Vector3d> points,
                                        const Se3Params& v,
                                        const CameraIntrinsics& K);
std::vector<Matrix26d> project_jacobian(const PointCloud& cloud,
                                        const Se3Params& v,
                                        const CameraIntrinsics& K);

/// Rotation angle in radians of a rotation matrix, robust near 0 and pi.
double rotation_angle(const Eigen::Matrix3d& R);

}  // namespace semcal
