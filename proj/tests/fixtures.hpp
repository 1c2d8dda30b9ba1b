#pragma once

// Synthetic inputs shared by the init_calib tests and the acceptance run.

#include <random>
#include <vector>

#include "oracles.hpp"
#include "semcal/init_calib.hpp"

namespace fixture {

using namespace semcal;

inline LabelGrid random_blocks(std::mt19937_64& rng, int width, int height, int labels,
                               int block) {
  LabelGrid g(width, height);
  std::uniform_int_distribution<int> pick(0, labels - 1);
  const int bw = (width + block - 1) / block, bh = (height + block - 1) / block;
  std::vector<int> tiles(static_cast<std::size_t>(bw) * bh);
  for (auto& t : tiles) t = pick(rng);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      g.at(r, c) = static_cast<std::uint16_t>(tiles[(r / block) * bw + c / block]);
  return g;
}

// b(r, c) = a(r + dy, c + dx) where defined, empty elsewhere.
inline LabelGrid shifted(const LabelGrid& a, int dx, int dy) {
  LabelGrid b(a.width, a.height);
  for (int r = 0; r < a.height; ++r)
    for (int c = 0; c < a.width; ++c) {
      const int ar = r + dy, ac = c + dx;
      if (ar >= 0 && ar < a.height && ac >= 0 && ac < a.width) b.at(r, c) = a.at(ar, ac);
    }
  return b;
}

struct PnpFixture {
  std::vector<Correspondence> corrs;
  RigidTransform T;
};

// Points spread through the camera frustum at 3-40 m, in the LiDAR frame.
inline PnpFixture pnp_fixture(std::uint64_t seed, int n, double noise_px, double outlier_rate,
                       const CameraIntrinsics& K) {
  std::mt19937_64 rng(seed);
  PnpFixture f;
  f.T = exp_se3(oracle::random_se3(rng, 2.5, 1.0));
  std::uniform_real_distribution<double> uu(0, K.width - 1), uv(0, K.height - 1), uz(3, 40),
      u01(0, 1);
  std::normal_distribution<double> noise(0, noise_px);
  const RigidTransform inv = f.T.inverse();
  for (int i = 0; i < n; ++i) {
    const double u = uu(rng), v = uv(rng), z = uz(rng);
    const Eigen::Vector3d pc((u - K.cx) / K.fx * z, (v - K.cy) / K.fy * z, z);
    Correspondence c{inv * pc, {u, v}};
    if (noise_px > 0) c.pixel += Eigen::Vector2d{noise(rng), noise(rng)};
    if (u01(rng) < outlier_rate) c.pixel = {uu(rng), uv(rng)};
    f.corrs.push_back(c);
  }
  return f;
}

}  // namespace fixture
