#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls the code path it is used to check.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "semcal/geometry.hpp"
#include "semcal/mine.hpp"
#include "semcal/sampling.hpp"

namespace oracle {

using semcal::Vector6d;

/// The 4x4 se(3) basis written out by hand: translations then rotations.
inline Eigen::Matrix4d basis(int i) {
  Eigen::Matrix4d B = Eigen::Matrix4d::Zero();
  switch (i) {
    case 0: B(0, 3) = 1; break;
    case 1: B(1, 3) = 1; break;
    case 2: B(2, 3) = 1; break;
    case 3: B(1, 2) = -1; B(2, 1) = 1; break;
    case 4: B(0, 2) = 1; B(2, 0) = -1; break;
    case 5: B(0, 1) = -1; B(1, 0) = 1; break;
  }
  return B;
}

/// Truncated power series sum_{n < terms} H^n / n! with H = sum v_i B_i.
inline Eigen::Matrix4d se3_exp_series(const Vector6d& v, int terms) {
  Eigen::Matrix4d H = Eigen::Matrix4d::Zero();
  for (int i = 0; i < 6; ++i) H += v[i] * basis(i);
  Eigen::Matrix4d term = Eigen::Matrix4d::Identity();
  Eigen::Matrix4d sum = term;
  for (int n = 1; n < terms; ++n) {
    term = term * H / static_cast<double>(n);
    sum += term;
  }
  return sum;
}

/// Uniform rotation direction with norm <= max_rot, translation in a cube.
inline Vector6d random_se3(std::mt19937_64& rng, double max_rot, double max_trans) {
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u01(0, 1), ut(-max_trans, max_trans);
  Eigen::Vector3d axis{n01(rng), n01(rng), n01(rng)};
  axis.normalize();
  Vector6d v;
  v << ut(rng), ut(rng), ut(rng), axis * (max_rot * u01(rng));
  return v;
}

inline Eigen::Vector2d pinhole(const Eigen::Matrix4d& T, const Eigen::Vector3d& p,
                               const semcal::CameraIntrinsics& K) {
  const Eigen::Vector4d pc = T * p.homogeneous();
  return {K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy};
}

struct GradientCheck {
  int checked = 0;
  double worst_relative_error = 0.0;
};

inline double relative_error(const Eigen::MatrixXd& analytic,
                             const Eigen::MatrixXd& numeric) {
  const double scale = std::max(numeric.norm(), 1e-8);
  return (analytic - numeric).norm() / scale;
}

/// Central differences of the pinhole projection under exp(h B_j) * T.
inline GradientCheck projection_jacobian_check(std::mt19937_64& rng,
                                               const semcal::CameraIntrinsics& K,
                                               int instances, double h) {
  GradientCheck out;
  std::uniform_real_distribution<double> ux(-0.4, 0.4), uz(2.0, 40.0);
  while (out.checked < instances) {
    const Vector6d v = random_se3(rng, 0.3, 0.5);
    const semcal::RigidTransform T = semcal::exp_se3(semcal::Se3Params(v));
    // Pick a camera-frame point comfortably inside the image, then express it
    // in the LiDAR frame.
    const double z = uz(rng);
    const Eigen::Vector3d pc(ux(rng) * z * K.width / K.fx,
                             ux(rng) * z * K.height / K.fy, z);
    const Eigen::Vector3d p = T.inverse() * pc;
    const std::vector<Eigen::Vector3d> pts = {p};
    const auto J = semcal::project_jacobian(pts, semcal::Se3Params(v), K);
    Eigen::Matrix<double, 2, 6> numeric;
    const Eigen::Matrix4d Tm = se3_exp_series(v, 40);
    for (int j = 0; j < 6; ++j) {
      Vector6d e = Vector6d::Zero();
      e[j] = h;
      const Eigen::Matrix4d plus = se3_exp_series(e, 12) * Tm;
      const Eigen::Matrix4d minus = se3_exp_series(-e, 12) * Tm;
      numeric.col(j) = (pinhole(plus, p, K) - pinhole(minus, p, K)) / (2 * h);
    }
    out.worst_relative_error =
        std::max(out.worst_relative_error, relative_error(J[0], numeric));
    ++out.checked;
  }
  return out;
}

/// Brute-force kernel sum over every pixel of the one-hot image.
inline Eigen::VectorXd bilinear_brute_force(const semcal::LabelImage& img, double u,
                                            double v) {
  auto k = [](double x) { return std::max(0.0, 1.0 - std::abs(x)); };
  Eigen::VectorXd out = Eigen::VectorXd::Zero(img.num_classes());
  for (int h = 0; h < img.height(); ++h) {
    for (int w = 0; w < img.width(); ++w) {
      const double weight = k(u - w) * k(v - h);
      if (weight != 0.0) out[img.at(h, w)] += weight;
    }
  }
  return out;
}

/// Random label image with blocky regions so that gradients are non-trivial.
inline semcal::LabelImage random_label_image(std::mt19937_64& rng, int width,
                                             int height, int classes) {
  std::uniform_int_distribution<int> pick(0, classes - 1);
  std::vector<std::uint16_t> grid(static_cast<std::size_t>(width) * height);
  for (auto& g : grid) g = static_cast<std::uint16_t>(pick(rng));
  return {width, height, classes, std::move(grid)};
}

/// Central differences of the brute-force sampler at random non-integer
/// coordinates away from the kernel kinks.
inline GradientCheck sampling_gradient_check(std::mt19937_64& rng,
                                             const semcal::LabelImage& img,
                                             int instances, double h) {
  GradientCheck out;
  std::uniform_real_distribution<double> uu(0, img.width() - 1),
      uv(0, img.height() - 1);
  auto near_integer = [](double x) {
    return std::abs(x - std::round(x)) < 1e-3;
  };
  std::vector<Eigen::Vector2d> pts;
  while (static_cast<int>(pts.size()) < instances) {
    const Eigen::Vector2d p{uu(rng), uv(rng)};
    if (near_integer(p.x()) || near_integer(p.y())) continue;
    pts.push_back(p);
  }
  const std::vector<std::uint8_t> valid(pts.size(), 1);
  const semcal::SoftLabelGradient g = semcal::sample_bilinear_grad(img, pts, valid);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Eigen::VectorXd du =
        (bilinear_brute_force(img, pts[i].x() + h, pts[i].y()) -
         bilinear_brute_force(img, pts[i].x() - h, pts[i].y())) / (2 * h);
    const Eigen::VectorXd dv =
        (bilinear_brute_force(img, pts[i].x(), pts[i].y() + h) -
         bilinear_brute_force(img, pts[i].x(), pts[i].y() - h)) / (2 * h);
    const auto r = static_cast<Eigen::Index>(i);
    const double err = std::max((g.du.row(r).transpose() - du).cwiseAbs().maxCoeff(),
                                (g.dv.row(r).transpose() - dv).cwiseAbs().maxCoeff());
    const double scale = std::max({du.cwiseAbs().maxCoeff(), dv.cwiseAbs().maxCoeff(), 1.0});
    out.worst_relative_error = std::max(out.worst_relative_error, err / scale);
    ++out.checked;
  }
  return out;
}

/// DV estimate recomputed from scratch: mean F(joint) - log mean exp F(marginal).
inline double dv_estimate(const semcal::MineNetwork& net, const semcal::MiBatch& b) {
  semcal::SoftLabels joint(b.x.rows(), 2 * b.x.cols());
  semcal::SoftLabels marginal(b.x.rows(), 2 * b.x.cols());
  joint << b.x, b.y;
  marginal << b.x, b.y_shuffled;
  const Eigen::VectorXd fj = net.evaluate(joint);
  const Eigen::VectorXd fm = net.evaluate(marginal);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < fm.size(); ++i) sum += std::exp(fm[i]);
  return fj.mean() - std::log(sum / static_cast<double>(fm.size()));
}

/// Random batch over `classes` with soft y rows.
inline semcal::MiBatch random_batch(std::mt19937_64& rng, int rows, int classes) {
  std::uniform_int_distribution<int> pick(0, classes - 1);
  std::uniform_real_distribution<double> u01(0.05, 1.0);
  std::vector<int> labels(rows);
  for (auto& l : labels) l = pick(rng);
  semcal::MiBatch b;
  b.x = semcal::one_hot_rows(labels, classes);
  b.y.resize(rows, classes);
  for (int i = 0; i < rows; ++i) {
    for (int c = 0; c < classes; ++c) b.y(i, c) = u01(rng);
    b.y.row(i) /= b.y.row(i).sum();
  }
  b.y_shuffled = semcal::shuffle_marginal(b.y, rng);
  return b;
}

/// Gives the output layer non-zero weights so every gradient path is active.
inline void randomize_output_layer(semcal::MineNetwork& net, std::mt19937_64& rng) {
  Eigen::VectorXd p = net.parameters();
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (Eigen::Index i = p.size() - net.hidden() - 1; i < p.size(); ++i) p[i] = u(rng);
  net.set_parameters(p);
}

}  // namespace oracle
