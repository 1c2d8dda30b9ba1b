#include "semcal/init_calib.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "semcal/errors.hpp"

namespace semcal {

LabelGrid::LabelGrid(int width, int height, std::uint16_t fill)
    : width(width), height(height),
      cells(static_cast<std::size_t>(width) * height, fill) {
  if (width < 1 || height < 1) throw InvalidArgument("label grid must be non-empty");
}

std::size_t LabelGrid::count_nonempty() const {
  return static_cast<std::size_t>(
      std::count_if(cells.begin(), cells.end(), [](auto c) { return c != kEmptyCell; }));
}

LabelGrid LabelGrid::from_image(const LabelImage& image) {
  LabelGrid g(image.width(), image.height());
  g.cells = image.grid();
  return g;
}

SphericalImage spherical_project(const PointCloud& cloud, const LidarGeometry& geometry) {
  geometry.validate();
  if (cloud.points.empty()) throw InvalidArgument("cannot project an empty cloud");
  SphericalImage out;
  out.geometry = geometry;
  out.grid = LabelGrid(geometry.ring_points, geometry.channels);
  out.point_index.assign(out.grid.cells.size(), -1);
  std::vector<double> best(out.grid.cells.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Eigen::Vector3d& p = cloud.points[i];
    const double range = p.norm();
    if (!(range > 0)) continue;
    const int row = geometry.row_of(std::atan2(p.z(), p.head<2>().norm()));
    if (row < 0) continue;
    const int col = geometry.col_of(std::atan2(p.y(), p.x()));
    const std::size_t k = out.grid.index(row, col);
    if (range < best[k]) {
      best[k] = range;
      out.grid.cells[k] = static_cast<std::uint16_t>(cloud.labels[i]);
      out.point_index[k] = static_cast<int>(i);
    }
  }
  return out;
}

ZoomMap ZoomMap::linear(int src_width, int src_height, int width, int height) {
  if (width < 2 || height < 2 || src_width < 1 || src_height < 1) {
    throw InvalidArgument("zoom target must be at least 2x2");
  }
  ZoomMap m;
  m.kind_ = Kind::Linear;
  m.width_ = width;
  m.height_ = height;
  m.src_width_ = src_width;
  m.src_height_ = src_height;
  m.sx_ = static_cast<double>(src_width) / width;
  m.sy_ = static_cast<double>(src_height) / height;
  return m;
}

ZoomMap ZoomMap::angular(const CameraIntrinsics& K, double azimuth_step,
                         double elevation_step) {
  K.validate();
  if (!(azimuth_step > 0) || !(elevation_step > 0)) {
    throw InvalidArgument("angular zoom steps must be positive");
  }
  ZoomMap m;
  m.kind_ = Kind::Angular;
  m.K_ = K;
  m.src_width_ = K.width;
  m.src_height_ = K.height;
  m.daz_ = azimuth_step;
  m.del_ = elevation_step;
  const double left = std::atan((-0.5 - K.cx) / K.fx);
  const double right = std::atan((K.width - 0.5 - K.cx) / K.fx);
  const double top = std::atan((K.cy + 0.5) / K.fy);
  const double bottom = -std::atan((K.height - 0.5 - K.cy) / K.fy);
  m.width_ = std::max(2, static_cast<int>(std::lround((right - left) / azimuth_step)));
  m.height_ = std::max(2, static_cast<int>(std::lround((top - bottom) / elevation_step)));
  m.az0_ = left + 0.5 * azimuth_step;
  m.el0_ = top - 0.5 * elevation_step;
  return m;
}

Eigen::Vector2d ZoomMap::zoom(const Eigen::Vector2d& pixel) const {
  if (kind_ == Kind::Linear) {
    return {(pixel.x() + 0.5) / sx_ - 0.5, (pixel.y() + 0.5) / sy_ - 0.5};
  }
  const double x = (pixel.x() - K_.cx) / K_.fx;
  const double y = (pixel.y() - K_.cy) / K_.fy;
  const double az = std::atan(x);
  const double el = -std::atan(y / std::sqrt(1 + x * x));
  return {(az - az0_) / daz_, (el0_ - el) / del_};
}

Eigen::Vector2d ZoomMap::dezoom(const Eigen::Vector2d& cell) const {
  if (kind_ == Kind::Linear) {
    return {(cell.x() + 0.5) * sx_ - 0.5, (cell.y() + 0.5) * sy_ - 0.5};
  }
  const double az = az0_ + cell.x() * daz_;
  const double el = el0_ - cell.y() * del_;
  return {K_.cx + K_.fx * std::tan(az), K_.cy - K_.fy * std::tan(el) / std::cos(az)};
}

ZoomedLabel zoom_label(const LabelImage& image, const ZoomMap& map) {
  if (map.src_width() != image.width() || map.src_height() != image.height()) {
    throw InvalidArgument("zoom map was built for a different image size");
  }
  ZoomedLabel out{LabelGrid(map.width(), map.height()), map};
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      const Eigen::Vector2d p = map.dezoom({c, r});
      const long u = std::lround(p.x()), v = std::lround(p.y());
      if (u < 0 || v < 0 || u >= image.width() || v >= image.height()) continue;
      out.grid.at(r, c) = image.at(static_cast<int>(v), static_cast<int>(u));
    }
  }
  return out;
}

ZoomedLabel zoom_label(const LabelImage& image, int width, int height) {
  return zoom_label(image, ZoomMap::linear(image.width(), image.height(), width, height));
}

ZoomMap matched_zoom(const CameraIntrinsics& K, const LidarGeometry& geometry) {
  geometry.validate();
  const double daz = 2 * std::numbers::pi / geometry.ring_points;
  const double del = geometry.vertical_fov_deg() * std::numbers::pi / 180 / geometry.channels;
  return ZoomMap::angular(K, daz, del);
}

namespace {

// Compact label codes: b uses 0..nb-1 with kEmptyCell kept, a uses 0..na-1
// with empty mapped to na.
struct Coded {
  std::vector<std::uint16_t> cells;
  int labels = 0;
};

Coded encode(const LabelGrid& g, bool empty_as_label) {
  std::vector<int> code(65536, -1);
  for (auto c : g.cells) {
    if (c != kEmptyCell) code[c] = 0;
  }
  int next = 0;
  for (int v = 0; v < kEmptyCell; ++v)
    if (code[v] >= 0) code[v] = next++;
  Coded out;
  out.labels = next;
  out.cells.resize(g.cells.size());
  for (std::size_t i = 0; i < g.cells.size(); ++i) {
    const auto c = g.cells[i];
    if (c == kEmptyCell) {
      out.cells[i] = empty_as_label ? static_cast<std::uint16_t>(next) : kEmptyCell;
    } else {
      out.cells[i] = static_cast<std::uint16_t>(code[c]);
    }
  }
  if (empty_as_label) ++out.labels;
  return out;
}

// Inclusive-exclusive 2D prefix sums of non-empty cells.
std::vector<long> nonempty_prefix(const LabelGrid& g) {
  const int W = g.width, H = g.height;
  std::vector<long> s(static_cast<std::size_t>(W + 1) * (H + 1), 0);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      s[(r + 1) * (W + 1) + c + 1] = s[r * (W + 1) + c + 1] + s[(r + 1) * (W + 1) + c] -
                                     s[r * (W + 1) + c] + (g.at(r, c) != kEmptyCell);
    }
  }
  return s;
}

long rect_sum(const std::vector<long>& s, int W, int r0, int c0, int r1, int c1) {
  const int w = W + 1;
  return s[r1 * w + c1] - s[r0 * w + c1] - s[r1 * w + c0] + s[r0 * w + c0];
}

double plug_in_mi(const std::vector<long>& counts, int na, int nb) {
  std::vector<long> ra(na, 0), rb(nb, 0);
  long n = 0;
  for (int i = 0; i < na; ++i) {
    for (int j = 0; j < nb; ++j) {
      const long k = counts[i * nb + j];
      ra[i] += k;
      rb[j] += k;
      n += k;
    }
  }
  if (n == 0) return 0;
  double mi = 0;
  const double N = static_cast<double>(n);
  for (int i = 0; i < na; ++i) {
    if (ra[i] == 0) continue;
    for (int j = 0; j < nb; ++j) {
      const long k = counts[i * nb + j];
      if (k == 0) continue;
      mi += k / N * std::log(k * N / (static_cast<double>(ra[i]) * rb[j]));
    }
  }
  return std::max(mi, 0.0);
}

bool better_tie(int dx, int dy, const Registration& best) {
  const long n1 = static_cast<long>(dx) * dx + static_cast<long>(dy) * dy;
  const long n0 = static_cast<long>(best.dx) * best.dx + static_cast<long>(best.dy) * best.dy;
  if (n1 != n0) return n1 < n0;
  return std::pair(dx, dy) < std::pair(best.dx, best.dy);
}

}  // namespace

Registration register_2d_mi(const LabelGrid& a, const LabelGrid& b, double min_overlap) {
  if (!(min_overlap > 0 && min_overlap <= 1)) {
    throw InvalidArgument("min_overlap must lie in (0, 1]");
  }
  const Coded ca = encode(a, true);
  const Coded cb = encode(b, false);
  const long na_cells = static_cast<long>(a.count_nonempty());
  const long nb_cells = static_cast<long>(b.count_nonempty());
  const double needed =
      min_overlap * static_cast<double>(std::min(a.cells.size(), b.cells.size()));
  if (na_cells == 0 || nb_cells == 0) {
    throw InsufficientOverlap("a registration grid has no labelled cells");
  }
  const std::vector<long> pa = nonempty_prefix(a), pb = nonempty_prefix(b);
  const std::uint16_t a_empty = static_cast<std::uint16_t>(ca.labels - 1);

  std::vector<long> counts(static_cast<std::size_t>(ca.labels) * std::max(cb.labels, 1));
  Registration best;
  bool found = false;
  for (int dy = -(b.height - 1); dy <= a.height - 1; ++dy) {
    // Rows of b that land inside a.
    const int br0 = std::max(0, -dy), br1 = std::min(b.height, a.height - dy);
    for (int dx = -(b.width - 1); dx <= a.width - 1; ++dx) {
      const int bc0 = std::max(0, -dx), bc1 = std::min(b.width, a.width - dx);
      const long bound = std::min(rect_sum(pa, a.width, br0 + dy, bc0 + dx, br1 + dy, bc1 + dx),
                                  rect_sum(pb, b.width, br0, bc0, br1, bc1));
      if (bound < needed) continue;
      std::fill(counts.begin(), counts.end(), 0);
      long both = 0;
      for (int r = br0; r < br1; ++r) {
        const std::uint16_t* rb = cb.cells.data() + static_cast<std::size_t>(r) * b.width;
        const std::uint16_t* ra =
            ca.cells.data() + static_cast<std::size_t>(r + dy) * a.width + dx;
        for (int c = bc0; c < bc1; ++c) {
          const std::uint16_t lb = rb[c];
          if (lb == kEmptyCell) continue;
          const std::uint16_t la = ra[c];
          both += la != a_empty;
          ++counts[static_cast<std::size_t>(la) * cb.labels + lb];
        }
      }
      if (both < needed) continue;
      const double mi = plug_in_mi(counts, ca.labels, cb.labels);
      if (!found || mi > best.mi + 1e-12 ||
          (std::abs(mi - best.mi) <= 1e-12 && better_tie(dx, dy, best))) {
        best = {dx, dy, mi, static_cast<std::size_t>(both)};
        found = true;
      }
    }
  }
  if (!found) {
    throw InsufficientOverlap("no offset overlaps enough labelled cells");
  }
  return best;
}

std::vector<Correspondence> extract_correspondences(const SphericalImage& sph,
                                                    const PointCloud& cloud,
                                                    const ZoomedLabel& zoomed,
                                                    const Registration& offset, int n,
                                                    std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("need a positive correspondence count");
  const LabelGrid& a = sph.grid;
  const LabelGrid& b = zoomed.grid;
  std::vector<std::pair<int, int>> agree;
  for (int r = 0; r < b.height; ++r) {
    const int ar = r + offset.dy;
    if (ar < 0 || ar >= a.height) continue;
    for (int c = 0; c < b.width; ++c) {
      const int ac = c + offset.dx;
      if (ac < 0 || ac >= a.width) continue;
      const auto lb = b.at(r, c);
      if (lb != kEmptyCell && lb == a.at(ar, ac)) agree.emplace_back(r, c);
    }
  }
  if (static_cast<int>(agree.size()) < n) {
    throw TooFewMatches("only " + std::to_string(agree.size()) + " agreeing cells, need " +
                        std::to_string(n));
  }
  std::mt19937_64 rng(seed);
  for (int k = 0; k < n; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, agree.size() - 1);
    std::swap(agree[k], agree[pick(rng)]);
  }
  const double umax = zoomed.map.src_width() - 1, vmax = zoomed.map.src_height() - 1;
  std::vector<Correspondence> out;
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    const auto [r, c] = agree[k];
    const int idx = sph.point_index[a.index(r + offset.dy, c + offset.dx)];
    Eigen::Vector2d px = zoomed.map.dezoom({c, r});
    px.x() = std::clamp(px.x(), 0.0, umax);
    px.y() = std::clamp(px.y(), 0.0, vmax);
    out.push_back({cloud.points.at(idx), px});
  }
  return out;
}

RigidTransform pnp_dlt(std::span<const Correspondence> corrs, const CameraIntrinsics& K) {
  const auto n = static_cast<Eigen::Index>(corrs.size());
  if (n < 6) throw DegenerateConfiguration("PnP needs at least 6 correspondences");

  Eigen::Vector3d m3 = Eigen::Vector3d::Zero();
  Eigen::Vector2d m2 = Eigen::Vector2d::Zero();
  std::vector<Eigen::Vector2d> xn(corrs.size());
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    xn[i] = {(corrs[i].pixel.x() - K.cx) / K.fx, (corrs[i].pixel.y() - K.cy) / K.fy};
    m3 += corrs[i].point;
    m2 += xn[i];
  }
  m3 /= n;
  m2 /= n;
  double d3 = 0, d2 = 0;
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const Eigen::Vector3d q = corrs[i].point - m3;
    d3 += q.norm();
    d2 += (xn[i] - m2).norm();
    scatter += q * q.transpose();
  }
  if (!(d3 > 0) || !(d2 > 0)) throw DegenerateConfiguration("coincident correspondences");
  const double s3 = std::sqrt(3.0) * n / d3, s2 = std::sqrt(2.0) * n / d2;

  const Eigen::Vector3d spread =
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(scatter).eigenvalues();
  if (spread[0] <= 1e-10 * spread[2]) {
    throw DegenerateConfiguration("correspondence points are coplanar");
  }

  Eigen::MatrixXd A(2 * n, 12);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Vector4d X;
    X << s3 * (corrs[i].point - m3), 1.0;
    const Eigen::Vector2d x = s2 * (xn[i] - m2);
    A.row(2 * i) << X.transpose(), Eigen::RowVector4d::Zero(), -x.x() * X.transpose();
    A.row(2 * i + 1) << Eigen::RowVector4d::Zero(), X.transpose(), -x.y() * X.transpose();
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv[10] <= 1e-9 * sv[0]) {
    throw DegenerateConfiguration("DLT system has a multi-dimensional null space");
  }
  const Eigen::VectorXd p = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> Pn;
  Pn << p.segment<4>(0).transpose(), p.segment<4>(4).transpose(), p.segment<4>(8).transpose();

  Eigen::Matrix3d T2 = Eigen::Matrix3d::Identity();
  T2(0, 0) = T2(1, 1) = s2;
  T2.block<2, 1>(0, 2) = -s2 * m2;
  Eigen::Matrix4d T3 = Eigen::Matrix4d::Identity();
  T3.topLeftCorner<3, 3>() *= s3;
  T3.block<3, 1>(0, 3) = -s3 * m3;
  Eigen::Matrix<double, 3, 4> P = T2.inverse() * Pn * T3;

  if (P.leftCols<3>().determinant() < 0) P = -P;
  const Eigen::JacobiSVD<Eigen::Matrix3d> ms(P.leftCols<3>(),
                                             Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d U = ms.matrixU();
  const Eigen::Matrix3d V = ms.matrixV();
  if ((U * V.transpose()).determinant() < 0) U.col(2) *= -1;
  const double scale = ms.singularValues().mean();
  if (!(scale > 0)) throw DegenerateConfiguration("DLT produced a singular camera matrix");
  return RigidTransform::from_nearest_rotation(U * V.transpose(), P.col(3) / scale);
}

namespace {

double reprojection_cost(std::span<const Correspondence> corrs, const CameraIntrinsics& K,
                         const RigidTransform& T) {
  double cost = 0;
  for (const auto& c : corrs) {
    const Eigen::Vector3d q = T * c.point;
    if (q.z() <= kMinDepth) return std::numeric_limits<double>::infinity();
    const Eigen::Vector2d px(K.fx * q.x() / q.z() + K.cx, K.fy * q.y() / q.z() + K.cy);
    cost += (px - c.pixel).squaredNorm();
  }
  return cost;
}

double reprojection_error(const Correspondence& c, const CameraIntrinsics& K,
                          const RigidTransform& T) {
  const Eigen::Vector3d q = T * c.point;
  if (q.z() <= kMinDepth) return std::numeric_limits<double>::infinity();
  const Eigen::Vector2d px(K.fx * q.x() / q.z() + K.cx, K.fy * q.y() / q.z() + K.cy);
  return (px - c.pixel).norm();
}

}  // namespace

RigidTransform refine_pnp(std::span<const Correspondence> corrs, const CameraIntrinsics& K,
                          RigidTransform T, int max_iters) {
  double cost = reprojection_cost(corrs, K, T);
  double lambda = 1e-6;
  for (int it = 0; it < max_iters && std::isfinite(cost) && cost > 0; ++it) {
    Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
    Vector6d g = Vector6d::Zero();
    for (const auto& c : corrs) {
      const Eigen::Vector3d q = T * c.point;
      const Eigen::Vector2d r(K.fx * q.x() / q.z() + K.cx - c.pixel.x(),
                              K.fy * q.y() / q.z() + K.cy - c.pixel.y());
      const Matrix26d J = pixel_jacobian(q, K);
      H += J.transpose() * J;
      g += J.transpose() * r;
    }
    bool accepted = false;
    while (lambda < 1e12) {
      Eigen::Matrix<double, 6, 6> D = H;
      D.diagonal() *= 1 + lambda;
      const Vector6d step = -D.ldlt().solve(g);
      if (!step.allFinite() || step.tail<3>().norm() >= 1.0) {
        lambda *= 10;
        continue;
      }
      const RigidTransform candidate = exp_se3(step) * T;
      const double c2 = reprojection_cost(corrs, K, candidate);
      if (c2 <= cost) {
        const bool tiny = step.norm() < 1e-15 || cost - c2 <= 1e-15 * cost;
        T = candidate;
        cost = c2;
        lambda = std::max(lambda / 10, 1e-12);
        accepted = !tiny;
        break;
      }
      lambda *= 10;
    }
    if (!accepted) break;
  }
  return T;
}

PnpResult solve_pnp(std::span<const Correspondence> corrs, const CameraIntrinsics& K,
                    const PnpOptions& options) {
  K.validate();
  if (corrs.size() < 6) throw DegenerateConfiguration("PnP needs at least 6 correspondences");
  auto classify = [&](const RigidTransform& T, std::vector<std::uint8_t>& mask) {
    std::size_t count = 0;
    mask.assign(corrs.size(), 0);
    for (std::size_t i = 0; i < corrs.size(); ++i) {
      if (reprojection_error(corrs[i], K, T) < options.threshold_px) {
        mask[i] = 1;
        ++count;
      }
    }
    return count;
  };
  auto subset = [&](const std::vector<std::uint8_t>& mask) {
    std::vector<Correspondence> s;
    for (std::size_t i = 0; i < corrs.size(); ++i)
      if (mask[i]) s.push_back(corrs[i]);
    return s;
  };

  PnpResult result{RigidTransform::identity(), {}, 0, 0};
  if (!options.ransac) {
    result.transform = refine_pnp(corrs, K, pnp_dlt(corrs, K));
    result.num_inliers = classify(result.transform, result.inliers);
  } else {
    std::mt19937_64 rng(options.seed);
    std::vector<std::size_t> idx(corrs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<std::uint8_t> mask;
    bool any = false;
    for (int trial = 0; trial < options.trials; ++trial) {
      std::vector<Correspondence> sample;
      for (std::size_t k = 0; k < 6; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
        std::swap(idx[k], idx[pick(rng)]);
        sample.push_back(corrs[idx[k]]);
      }
      RigidTransform T;
      try {
        T = pnp_dlt(sample, K);
      } catch (const DegenerateConfiguration&) {
        continue;
      }
      const std::size_t count = classify(T, mask);
      if (!any || count > result.num_inliers) {
        result.transform = T;
        result.num_inliers = count;
        result.inliers = mask;
        any = true;
      }
    }
    if (!any || result.num_inliers < static_cast<std::size_t>(options.min_inliers)) {
      throw NoConsensus("best RANSAC hypothesis has " + std::to_string(result.num_inliers) +
                        " inliers");
    }
    for (int round = 0; round < 5; ++round) {
      const std::vector<Correspondence> in = subset(result.inliers);
      RigidTransform T = refine_pnp(in, K, result.transform);
      std::vector<std::uint8_t> next;
      const std::size_t count = classify(T, next);
      if (count < static_cast<std::size_t>(options.min_inliers)) break;
      const bool stable = next == result.inliers;
      result.transform = T;
      result.inliers = std::move(next);
      result.num_inliers = count;
      if (stable) break;
    }
  }
  double sq = 0;
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    if (result.inliers[i]) sq += std::pow(reprojection_error(corrs[i], K, result.transform), 2);
  }
  result.rms_px = result.num_inliers ? std::sqrt(sq / result.num_inliers) : 0.0;
  return result;
}

InitialCalibration initial_calibration(const PointCloud& cloud, const LabelImage& image,
                                       const CameraIntrinsics& K,
                                       const LidarGeometry& geometry,
                                       const InitOptions& options) {
  K.validate();
  cloud.validate(image.num_classes());
  const SphericalImage sph = spherical_project(cloud, geometry);
  const ZoomedLabel zoomed = zoom_label(image, matched_zoom(K, geometry));
  const Registration reg = register_2d_mi(sph.grid, zoomed.grid, options.min_overlap);
  const std::vector<Correspondence> corrs =
      extract_correspondences(sph, cloud, zoomed, reg, options.correspondences, options.seed);
  PnpOptions pnp = options.pnp;
  pnp.seed ^= options.seed;
  const PnpResult solved = solve_pnp(corrs, K, pnp);
  return {solved.transform, reg, corrs.size(), solved.num_inliers};
}

}  // namespace semcal
