#pragma once

// Differentiable bilinear lookup of a semantic label image.
//
// Labels are one-hot encoded before interpolation, so a sampled value is a
// probability vector over classes rather than an interpolated class ID.

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

namespace semcal {

class LabelImage {
 public:
  LabelImage() = default;
  /// Throws InvalidArgument for images smaller than 2x2 or fewer than 2
  /// classes, LabelRangeError for cells outside [0, num_classes).
  LabelImage(int width, int height, int num_classes,
             std::vector<std::uint16_t> grid);
  /// Constant image.
  LabelImage(int width, int height, int num_classes, std::uint16_t fill);

  int width() const { return width_; }
  int height() const { return height_; }
  int num_classes() const { return num_classes_; }

  std::uint16_t at(int row, int col) const { return grid_[row * width_ + col]; }
  std::uint16_t& at(int row, int col) { return grid_[row * width_ + col]; }
  const std::vector<std::uint16_t>& grid() const { return grid_; }

  friend bool operator==(const LabelImage&, const LabelImage&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int num_classes_ = 0;
  std::vector<std::uint16_t> grid_;
};

/// Dense H x W x C indicator tensor, channel-fastest.
struct OneHotImage {
  int width = 0, height = 0, num_classes = 0;
  std::vector<double> data;

  double at(int row, int col, int c) const {
    return data[(static_cast<std::size_t>(row) * width + col) * num_classes + c];
  }
};

OneHotImage one_hot(const LabelImage& image);

/// Row-major N x C matrix of per-point class probabilities.
using SoftLabels =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Derivatives of each sampled probability with respect to the pixel
/// coordinates: du(i, c) = d p_i[c] / du_i, dv likewise.
struct SoftLabelGradient {
  SoftLabels du;
  SoftLabels dv;
};

/// Bilinear kernel k(x) = max(0, 1 - |x|) applied separably to the one-hot
/// image. Invalid points receive the uniform vector. Throws OutOfBounds when a
/// valid coordinate lies outside [0, W-1] x [0, H-1].
SoftLabels sample_bilinear(const LabelImage& image,
                           std::span<const Eigen::Vector2d> uv,
                           std::span<const std::uint8_t> valid);

/// Piecewise-constant derivative of sample_bilinear. At integer coordinates
/// the right-hand derivative is used (left-hand on the last row/column).
SoftLabelGradient sample_bilinear_grad(const LabelImage& image,
                                       std::span<const Eigen::Vector2d> uv,
                                       std::span<const std::uint8_t> valid);

/// Values and gradients in one pass; what the calibrator uses.
void sample_bilinear_with_grad(const LabelImage& image,
                               std::span<const Eigen::Vector2d> uv,
                               std::span<const std::uint8_t> valid,
                               SoftLabels& values, SoftLabelGradient& grad);

}  // namespace semcal
