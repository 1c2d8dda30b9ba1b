#include "semcal/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "semcal/errors.hpp"

namespace semcal {

LabelImage::LabelImage(int width, int height, int num_classes,
                       std::vector<std::uint16_t> grid)
    : width_(width),
      height_(height),
      num_classes_(num_classes),
      grid_(std::move(grid)) {
  if (width < 2 || height < 2) {
    throw InvalidArgument("label image must be at least 2x2");
  }
  if (num_classes < 2) {
    throw InvalidArgument("label image needs at least 2 classes");
  }
  if (grid_.size() != static_cast<std::size_t>(width) * height) {
    throw InvalidArgument("label grid size does not match dimensions");
  }
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    if (grid_[i] >= num_classes) {
      throw LabelRangeError("pixel " + std::to_string(i) + " has label " +
                            std::to_string(grid_[i]) + " >= " +
                            std::to_string(num_classes));
    }
  }
}

LabelImage::LabelImage(int width, int height, int num_classes,
                       std::uint16_t fill)
    : LabelImage(width, height, num_classes,
                 std::vector<std::uint16_t>(
                     static_cast<std::size_t>(std::max(width, 0)) *
                         std::max(height, 0),
                     fill)) {}

OneHotImage one_hot(const LabelImage& image) {
  OneHotImage out{image.width(), image.height(), image.num_classes(), {}};
  const std::size_t C = image.num_classes();
  out.data.assign(image.grid().size() * C, 0.0);
  for (std::size_t i = 0; i < image.grid().size(); ++i) {
    out.data[i * C + image.grid()[i]] = 1.0;
  }
  return out;
}

namespace {

struct Cell {
  int col0, row0;
  double fu, fv;
};

// Lower-left corner of the interpolation cell; the last row/column folds into
// the cell below it so that coordinate W-1 is interpolated with weight 1.
Cell locate(const LabelImage& image, const Eigen::Vector2d& uv, std::size_t i) {
  const double u = uv.x();
  const double v = uv.y();
  if (!(u >= 0.0 && u <= image.width() - 1 && v >= 0.0 &&
        v <= image.height() - 1)) {
    throw OutOfBounds("point " + std::to_string(i) + " at (" +
                      std::to_string(u) + ", " + std::to_string(v) +
                      ") is outside the image");
  }
  const int c0 = std::min(static_cast<int>(u), image.width() - 2);
  const int r0 = std::min(static_cast<int>(v), image.height() - 2);
  return {c0, r0, u - c0, v - r0};
}

void check_sizes(std::span<const Eigen::Vector2d> uv,
                 std::span<const std::uint8_t> valid) {
  if (uv.size() != valid.size()) {
    throw InvalidArgument("coordinate and mask lengths differ");
  }
}

}  // namespace

void sample_bilinear_with_grad(const LabelImage& image,
                               std::span<const Eigen::Vector2d> uv,
                               std::span<const std::uint8_t> valid,
                               SoftLabels& values, SoftLabelGradient& grad) {
  check_sizes(uv, valid);
  const int C = image.num_classes();
  const auto n = static_cast<Eigen::Index>(uv.size());
  values.setConstant(n, C, 1.0 / C);
  grad.du.setZero(n, C);
  grad.dv.setZero(n, C);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!valid[i]) continue;
    const Cell cell = locate(image, uv[i], i);
    const int l00 = image.at(cell.row0, cell.col0);
    const int l01 = image.at(cell.row0, cell.col0 + 1);
    const int l10 = image.at(cell.row0 + 1, cell.col0);
    const int l11 = image.at(cell.row0 + 1, cell.col0 + 1);
    const double fu = cell.fu;
    const double fv = cell.fv;
    auto row = values.row(i);
    row.setZero();
    row[l00] += (1 - fu) * (1 - fv);
    row[l01] += fu * (1 - fv);
    row[l10] += (1 - fu) * fv;
    row[l11] += fu * fv;
    auto du = grad.du.row(i);
    du[l00] -= 1 - fv;
    du[l01] += 1 - fv;
    du[l10] -= fv;
    du[l11] += fv;
    auto dv = grad.dv.row(i);
    dv[l00] -= 1 - fu;
    dv[l01] -= fu;
    dv[l10] += 1 - fu;
    dv[l11] += fu;
  }
}

SoftLabels sample_bilinear(const LabelImage& image,
                           std::span<const Eigen::Vector2d> uv,
                           std::span<const std::uint8_t> valid) {
  SoftLabels values;
  SoftLabelGradient grad;
  sample_bilinear_with_grad(image, uv, valid, values, grad);
  return values;
}

SoftLabelGradient sample_bilinear_grad(const LabelImage& image,
                                       std::span<const Eigen::Vector2d> uv,
                                       std::span<const std::uint8_t> valid) {
  SoftLabels values;
  SoftLabelGradient grad;
  sample_bilinear_with_grad(image, uv, valid, values, grad);
  return grad;
}

}  // namespace semcal
