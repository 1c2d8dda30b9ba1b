#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "semcal/errors.hpp"
#include "semcal/sampling.hpp"

using namespace semcal;

namespace {

// Left half label 0, right half label 1 (columns 0..2 vs 3..5).
LabelImage split_image() {
  std::vector<std::uint16_t> grid(6 * 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 6; ++c) grid[r * 6 + c] = c < 3 ? 0 : 1;
  return {6, 4, 2, std::move(grid)};
}

SoftLabels sample_one(const LabelImage& img, double u, double v) {
  const std::vector<Eigen::Vector2d> uv = {{u, v}};
  const std::vector<std::uint8_t> valid = {1};
  return sample_bilinear(img, uv, valid);
}

}  // namespace

TEST_CASE("LabelImage invariants") {
  CHECK_THROWS_AS(LabelImage(1, 5, 3, std::uint16_t{0}), InvalidArgument);
  CHECK_THROWS_AS(LabelImage(4, 4, 1, std::uint16_t{0}), InvalidArgument);
  CHECK_THROWS_AS(LabelImage(2, 2, 3, std::vector<std::uint16_t>{0, 1, 2, 3}),
                  LabelRangeError);
  CHECK_THROWS_AS(LabelImage(2, 2, 3, std::vector<std::uint16_t>{0, 1, 2}),
                  InvalidArgument);
}

TEST_CASE("one_hot encodes each pixel as an indicator") {
  const LabelImage two(2, 2, 4, std::uint16_t{2});
  const OneHotImage oh = one_hot(two);
  for (int c = 0; c < 4; ++c) CHECK(oh.at(0, 0, c) == (c == 2 ? 1.0 : 0.0));

  const LabelImage zeros(5, 3, 3, std::uint16_t{0});
  const OneHotImage z = one_hot(zeros);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 5; ++c) CHECK(z.at(r, c, 0) == 1.0);

  std::mt19937_64 rng(1);
  const LabelImage rnd = oracle::random_label_image(rng, 7, 5, 6);
  const OneHotImage ro = one_hot(rnd);
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 7; ++c) {
      double sum = 0;
      for (int k = 0; k < 6; ++k) sum += ro.at(r, c, k);
      CHECK(sum == 1.0);
      CHECK(ro.at(r, c, rnd.at(r, c)) == 1.0);
    }
  }
}

TEST_CASE("sample_bilinear worked examples") {
  std::mt19937_64 rng(5);
  const LabelImage img = oracle::random_label_image(rng, 10, 12, 5);
  const SoftLabels at_grid = sample_one(img, 3, 7);
  for (int c = 0; c < 5; ++c) CHECK(at_grid(0, c) == (c == img.at(7, 3) ? 1.0 : 0.0));

  const LabelImage split = split_image();
  const SoftLabels mid = sample_one(split, 2.5, 1.0);
  CHECK(mid(0, 0) == doctest::Approx(0.5));
  CHECK(mid(0, 1) == doctest::Approx(0.5));

  const SoftLabels quarter = sample_one(split, 2.25, 1.0);
  CHECK(quarter(0, 0) == doctest::Approx(0.75));
  CHECK(quarter(0, 1) == doctest::Approx(0.25));
}

TEST_CASE("sample_bilinear agrees with the brute-force kernel sum") {
  std::mt19937_64 rng(9);
  const LabelImage img = oracle::random_label_image(rng, 9, 7, 4);
  std::uniform_real_distribution<double> uu(0, 8), uv(0, 6);
  std::vector<Eigen::Vector2d> pts;
  for (int i = 0; i < 500; ++i) pts.push_back({uu(rng), uv(rng)});
  pts.push_back({8, 6});
  pts.push_back({0, 6});
  pts.push_back({8, 0});
  const std::vector<std::uint8_t> valid(pts.size(), 1);
  const SoftLabels s = sample_bilinear(img, pts, valid);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Eigen::VectorXd ref = oracle::bilinear_brute_force(img, pts[i].x(), pts[i].y());
    const auto r = static_cast<Eigen::Index>(i);
    CHECK((s.row(r).transpose() - ref).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(s.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.row(r).minCoeff() >= 0.0);
  }
}

TEST_CASE("invalid points receive the uniform label and zero gradient") {
  const LabelImage img = split_image();
  const std::vector<Eigen::Vector2d> uv = {{-50, 3}, {1.5, 1.5}};
  const std::vector<std::uint8_t> valid = {0, 1};
  const SoftLabels s = sample_bilinear(img, uv, valid);
  CHECK(s(0, 0) == 0.5);
  CHECK(s(0, 1) == 0.5);
  const SoftLabelGradient g = sample_bilinear_grad(img, uv, valid);
  CHECK(g.du.row(0).isZero(0));
  CHECK(g.dv.row(0).isZero(0));
}

TEST_CASE("valid coordinates outside the image are rejected") {
  const LabelImage img = split_image();
  for (const Eigen::Vector2d p : {Eigen::Vector2d(-0.01, 1), Eigen::Vector2d(5.01, 1),
                                  Eigen::Vector2d(1, 3.5), Eigen::Vector2d(1, -1e-9)}) {
    const std::vector<Eigen::Vector2d> uv = {p};
    const std::vector<std::uint8_t> valid = {1};
    CHECK_THROWS_AS(sample_bilinear(img, uv, valid), OutOfBounds);
    CHECK_THROWS_AS(sample_bilinear_grad(img, uv, valid), OutOfBounds);
  }
}

TEST_CASE("gradient is zero inside constant regions and antisymmetric at an edge") {
  const LabelImage constant(8, 8, 3, std::uint16_t{1});
  const std::vector<Eigen::Vector2d> uv = {{3.3, 4.7}, {0, 0}, {7, 7}};
  const std::vector<std::uint8_t> valid(3, 1);
  const SoftLabelGradient g = sample_bilinear_grad(constant, uv, valid);
  CHECK(g.du.isZero(0));
  CHECK(g.dv.isZero(0));
  const SoftLabels s = sample_bilinear(constant, uv, valid);
  for (int i = 0; i < 3; ++i) CHECK(s(i, 1) == 1.0);

  const LabelImage split = split_image();
  const std::vector<Eigen::Vector2d> mid = {{2.5, 1.25}};
  const std::vector<std::uint8_t> one = {1};
  const SoftLabelGradient e = sample_bilinear_grad(split, mid, one);
  CHECK(e.du(0, 0) == doctest::Approx(-1.0));
  CHECK(e.du(0, 0) == -e.du(0, 1));
  CHECK(e.dv(0, 0) == 0.0);
}

TEST_CASE("sample_bilinear_grad matches central differences") {
  std::mt19937_64 rng(77);
  const LabelImage img = oracle::random_label_image(rng, 16, 12, 5);
  const auto stats = oracle::sampling_gradient_check(rng, img, 1000, 1e-4);
  CHECK(stats.checked == 1000);
  CHECK(stats.worst_relative_error < 1e-6);
}
