#include "semcal/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "semcal/errors.hpp"

namespace semcal {

namespace {

constexpr double kSmallAngle = 1e-8;

// Rodrigues coefficients sin(t)/t, (1-cos t)/t^2, (t - sin t)/t^3 with their
// second-order expansions below kSmallAngle.
struct ExpCoefficients {
  double a, b, c;
};

ExpCoefficients exp_coefficients(double theta) {
  const double t2 = theta * theta;
  if (theta < kSmallAngle) {
    return {1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0};
  }
  const double half = std::sin(0.5 * theta);
  const double b = 2.0 * half * half / t2;
  // theta - sin(theta) cancels catastrophically for small angles.
  const double c = theta < 1e-3
                       ? 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
                       : (theta - std::sin(theta)) / (t2 * theta);
  return {std::sin(theta) / theta, b, c};
}

Eigen::Vector3d vee(const Eigen::Matrix3d& W) {
  return {W(2, 1), W(0, 2), W(1, 0)};
}

}  // namespace

Se3Params::Se3Params(const Vector6d& v) : v_(v) {
  if (!v.allFinite()) {
    throw NonFinite("se(3) parameters contain a non-finite entry");
  }
  if (v.tail<3>().norm() >= std::numbers::pi) {
    throw RotationOutOfRange("rotation norm " +
                             std::to_string(v.tail<3>().norm()) +
                             " is outside the principal branch");
  }
}

RigidTransform::RigidTransform(const Eigen::Matrix3d& R,
                               const Eigen::Vector3d& t)
    : R_(R), t_(t) {
  if (!R.allFinite() || !t.allFinite()) {
    throw NonFinite("rigid transform contains a non-finite entry");
  }
  const double ortho =
      (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-9 || std::abs(R.determinant() - 1.0) > 1e-9) {
    throw InvalidArgument("matrix is not a proper rotation (orthogonality "
                          "residual " + std::to_string(ortho) + ")");
  }
}

RigidTransform RigidTransform::from_nearest_rotation(const Eigen::Matrix3d& M,
                                                     const Eigen::Vector3d& t) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(M,
                                        Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) {
    D(2, 2) = -1.0;
  }
  return {svd.matrixU() * D * svd.matrixV().transpose(), t};
}

RigidTransform RigidTransform::from_matrix(const Eigen::Matrix4d& H) {
  const Eigen::RowVector4d bottom(0, 0, 0, 1);
  if ((H.row(3) - bottom).cwiseAbs().maxCoeff() > 1e-12) {
    throw InvalidArgument("homogeneous transform must end in (0, 0, 0, 1)");
  }
  return {H.topLeftCorner<3, 3>(), H.topRightCorner<3, 1>()};
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d H = Eigen::Matrix4d::Identity();
  H.topLeftCorner<3, 3>() = R_;
  H.topRightCorner<3, 1>() = t_;
  return H;
}

RigidTransform RigidTransform::operator*(const RigidTransform& other) const {
  RigidTransform out;
  out.R_ = R_ * other.R_;
  out.t_ = R_ * other.t_ + t_;
  return out;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.R_ = R_.transpose();
  out.t_ = -(out.R_ * t_);
  return out;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) {
    throw InvalidArgument("focal lengths must be positive");
  }
  if (width < 2 || height < 2) {
    throw InvalidArgument("image must be at least 2x2 pixels");
  }
  if (!(cx >= 0 && cx < width && cy >= 0 && cy < height)) {
    throw InvalidArgument("principal point outside the image");
  }
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d K;
  K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return K;
}

void PointCloud::validate(int num_classes) const {
  if (points.empty()) {
    throw InvalidArgument("point cloud is empty");
  }
  if (points.size() != labels.size()) {
    throw InvalidArgument("point cloud has " + std::to_string(points.size()) +
                          " points but " + std::to_string(labels.size()) +
                          " labels");
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i].allFinite()) {
      throw NonFinite("point " + std::to_string(i) + " is not finite");
    }
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw LabelRangeError("label " + std::to_string(labels[i]) +
                            " of point " + std::to_string(i) +
                            " outside [0, " + std::to_string(num_classes) +
                            ")");
    }
  }
}

std::size_t Projection::num_valid() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
}

Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d S;
  // clang-format off
  S <<     0, -w.z(),  w.y(),
       w.z(),      0, -w.x(),
      -w.y(),  w.x(),      0;
  // clang-format on
  return S;
}

Eigen::Matrix4d se3_generator(int i) {
  Eigen::Matrix4d B = Eigen::Matrix4d::Zero();
  if (i < 0 || i > 5) {
    throw InvalidArgument("generator index out of range");
  }
  if (i < 3) {
    B(i, 3) = 1.0;
  } else {
    B.topLeftCorner<3, 3>() = skew(Eigen::Vector3d::Unit(i - 3));
  }
  return B;
}

RigidTransform exp_se3(const Se3Params& params) {
  const Eigen::Vector3d rho = params.translation_part();
  const Eigen::Vector3d omega = params.rotation_part();
  const double theta = omega.norm();
  const auto [a, b, c] = exp_coefficients(theta);
  const Eigen::Matrix3d W = skew(omega);
  const Eigen::Matrix3d W2 = W * W;
  const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
  const Eigen::Matrix3d R = I + a * W + b * W2;
  const Eigen::Matrix3d V = I + b * W + c * W2;
  return {R, V * rho};
}

RigidTransform exp_se3(const Vector6d& v) { return exp_se3(Se3Params(v)); }

double rotation_angle(const Eigen::Matrix3d& R) {
  const double s = 0.5 * vee(R - R.transpose()).norm();
  const double c = 0.5 * (R.trace() - 1.0);
  return std::atan2(s, c);
}

Se3Params log_se3(const RigidTransform& T) {
  const Eigen::Matrix3d& R = T.rotation();
  const double theta = rotation_angle(R);
  if (theta >= std::numbers::pi - 1e-6) {
    throw RotationOutOfRange("rotation angle too close to pi for log map");
  }
  Eigen::Vector3d omega;
  const Eigen::Vector3d axis_sin = 0.5 * vee(R - R.transpose());
  if (theta < kSmallAngle) {
    omega = axis_sin * (1.0 + theta * theta / 6.0);
  } else if (theta < 2.5) {
    omega = axis_sin * (theta / std::sin(theta));
  } else {
    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part and take its sign from the antisymmetric one.
    const Eigen::Matrix3d S =
        0.5 * (R + R.transpose()) - std::cos(theta) * Eigen::Matrix3d::Identity();
    int k = 0;
    S.diagonal().maxCoeff(&k);
    Eigen::Vector3d axis = S.col(k).normalized();
    if (axis.dot(axis_sin) < 0) axis = -axis;
    omega = theta * axis;
  }
  const Eigen::Matrix3d W = skew(omega);
  double coeff;
  if (theta < 1e-4) {
    coeff = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    coeff = (1.0 - theta * std::sin(theta) / (2.0 * (1.0 - std::cos(theta)))) /
            (theta * theta);
  }
  const Eigen::Matrix3d V_inv =
      Eigen::Matrix3d::Identity() - 0.5 * W + coeff * W * W;
  Vector6d v;
  v << V_inv * T.translation(), omega;
  return Se3Params(v);
}

Projection project(std::span<const Eigen::Vector3d> points,
                   const RigidTransform& T, const CameraIntrinsics& K) {
  Projection out;
  out.pixels.resize(points.size());
  out.valid.assign(points.size(), 0);
  const double umax = K.width - 1;
  const double vmax = K.height - 1;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Eigen::Vector3d pc = T * points[i];
    if (!(pc.z() > kMinDepth)) {
      out.pixels[i].setZero();
      continue;
    }
    const double u = K.fx * pc.x() / pc.z() + K.cx;
    const double v = K.fy * pc.y() / pc.z() + K.cy;
    out.pixels[i] = {u, v};
    out.valid[i] = (u >= 0 && u <= umax && v >= 0 && v <= vmax) ? 1 : 0;
  }
  return out;
}

Projection project(const PointCloud& cloud, const RigidTransform& T,
                   const CameraIntrinsics& K) {
  return project(std::span<const Eigen::Vector3d>(cloud.points), T, K);
}

Matrix26d pixel_jacobian(const Eigen::Vector3d& p_cam,
                         const CameraIntrinsics& K) {
  const double iz = 1.0 / p_cam.z();
  Eigen::Matrix<double, 2, 3> d_pix;
  // clang-format off
  d_pix << K.fx * iz, 0, -K.fx * p_cam.x() * iz * iz,
           0, K.fy * iz, -K.fy * p_cam.y() * iz * iz;
  // clang-format on
  // d(p_cam)/d(epsilon) = [I | -skew(p_cam)] for exp(epsilon) * T.
  Matrix36d d_point;
  d_point.leftCols<3>().setIdentity();
  d_point.rightCols<3>() = -skew(p_cam);
  return d_pix * d_point;
}

std::vector<Matrix26d> project_jacobian(std::span<const Eigen::Vector3d> points,
                                        const Se3Params& v,
                                        const CameraIntrinsics& K) {
  const RigidTransform T = exp_se3(v);
  const Projection proj = project(points, T, K);
  std::vector<Matrix26d> J(points.size(), Matrix26d::Zero());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (proj.valid[i]) J[i] = pixel_jacobian(T * points[i], K);
  }
  return J;
}

std::vector<Matrix26d> project_jacobian(const PointCloud& cloud,
                                        const Se3Params& v,
                                        const CameraIntrinsics& K) {
  return project_jacobian(std::span<const Eigen::Vector3d>(cloud.points), v, K);
}

}  // namespace semcal
