#include <cmath>

#include "doctest.h"
#include "organocc/augment.hpp"
#include "organocc/error.hpp"
#include "organocc/shapes.hpp"

using namespace organocc;

namespace {

// 12^3 grid whose world frame equals the normalized frame.
VolumeGrid unit_grid(int n = 12) {
  const double sp = 2.0 / n;
  return VolumeGrid({n, n, n}, {sp, sp, sp}, {-1 + sp / 2, -1 + sp / 2, -1 + sp / 2});
}

double field(const Vec3& q) { return 0.3 + 2 * q.x - q.y + 0.5 * q.z; }

VolumeGrid linear_volume(int n = 12) {
  VolumeGrid v = unit_grid(n);
  const auto f = v.frame();
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) v.at(i, j, k) = field(f.voxel_center_normalized(i, j, k));
  return v;
}

bool in_center_hull(const Vec3& q, int n, double margin = 0) {
  const double lim = 1.0 - 1.0 / n - margin;
  return std::abs(q.x) <= lim && std::abs(q.y) <= lim && std::abs(q.z) <= lim;
}

AugmentConfig zero_config() {
  AugmentConfig c;
  c.translation = 0;
  c.rotation_deg = {0, 0, 0};
  c.scale_min = c.scale_max = 1;
  return c;
}

}  // namespace

TEST_CASE("sample_affine") {
  Rng rng(1);
  SUBCASE("zero-width ranges give the identity") {
    auto a = sample_affine(zero_config(), rng);
    CHECK(a.matrix.matrix() == Affine::identity().matrix());
  }
  SUBCASE("pure translation") {
    auto c = zero_config();
    c.translation = 0.1;
    auto a = sample_affine(c, rng);
    const auto m = a.matrix.matrix();
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) CHECK(m[i][j] == (i == j ? 1.0 : 0.0));
      CHECK(m[i][3] == a.translation[i]);
    }
    CHECK(m[3] == std::array<double, 4>{0, 0, 0, 1});
  }
  SUBCASE("10^4 draws stay within the configured ranges") {
    AugmentConfig c;
    for (int i = 0; i < 10000; ++i) {
      auto a = sample_affine(c, rng);
      for (int ax = 0; ax < 3; ++ax) {
        CHECK(std::abs(a.translation[ax]) <= 0.2);
        CHECK(std::abs(a.rotation_deg[ax]) <= 15.0);
        CHECK(a.scale[ax] >= 0.9);
        CHECK(a.scale[ax] <= 1.1);
      }
      CHECK(a.matrix.determinant() > 0);
      // T * R * S order.
      const Vec3 p{0.3, -0.2, 0.7};
      const Vec3 expect = Affine::translate(a.translation)
                              .apply(Affine::rotate_xyz(a.rotation_deg * (M_PI / 180)).apply(hadamard(a.scale, p)));
      if (distance(a.matrix.apply(p), expect) > 1e-12) FAIL("composition order");
    }
  }
  SUBCASE("invalid scale range") {
    auto c = zero_config();
    c.scale_min = 0;
    CHECK_THROWS_AS(sample_affine(c, rng), Error);
  }
}

TEST_CASE("warp_volume") {
  auto v = linear_volume();
  SUBCASE("identity") {
    auto w = warp_volume(v, Affine::identity());
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(w.values[i] - v.values[i]) < 1e-6);
  }
  SUBCASE("linear field maps to f o A^-1") {
    const Affine a = Affine::translate({0.05, -0.1, 0.02}) * Affine::rotate_xyz({0.1, -0.2, 0.15}) *
                     Affine::scale({1.05, 0.95, 1.0});
    const Affine inv = a.inverse();
    auto w = warp_volume(v, a);
    const auto f = v.frame();
    int checked = 0;
    for (int k = 0; k < 12; ++k)
      for (int j = 0; j < 12; ++j)
        for (int i = 0; i < 12; ++i) {
          const Vec3 src = inv.apply(f.voxel_center_normalized(i, j, k));
          if (!in_center_hull(src, 12)) continue;
          ++checked;
          CHECK(std::abs(w.at(i, j, k) - field(src)) < 1e-6);
        }
    CHECK(checked > 500);
  }
  SUBCASE("constant volume stays constant") {
    VolumeGrid c = unit_grid();
    std::fill(c.values.begin(), c.values.end(), 4.0);
    auto w = warp_volume(c, Affine::rotate_xyz({0.5, 0.2, -0.3}) * Affine::scale({1.2, 0.8, 1.1}));
    for (double x : w.values) CHECK(x == 4.0);
  }
  SUBCASE("out-of-source samples take the fill") {
    v.fill = -7.0;
    auto w = warp_volume(v, Affine::translate({1.5, 0, 0}));
    CHECK(w.at(0, 5, 5) == -7.0);
    CHECK(w.fill == v.fill);
  }
  SUBCASE("singular transform") { CHECK_THROWS_AS(warp_volume(v, Affine::scale({1, 0, 1})), Error); }
}

TEST_CASE("transform_points") {
  const std::vector<Vec3> p{{0.1, 0.2, 0.3}, {-0.5, 0.4, 0.9}};
  CHECK(transform_points(p, Affine::identity()) == p);
  auto s = transform_points(p, Affine::scale({2, 2, 2}));
  CHECK(s[1] == Vec3{-1.0, 0.8, 1.8});
  const Affine a = Affine::translate({0.1, 0, -0.2}) * Affine::rotate_xyz({0.3, 0.1, 0.2}) * Affine::scale({1.1, 0.9, 1});
  auto back = transform_points(transform_points(p, a), a.inverse());
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(distance(back[i], p[i]) < 1e-12);
}

TEST_CASE("apply_paired") {
  auto v = linear_volume(16);
  QuerySet q;
  q.organs = 1;
  Rng rng(2);
  auto shape = shapes::ellipsoid({0.1, 0, -0.1}, {0.5, 0.35, 0.3}, Affine::rotate_xyz({0.2, 0.1, 0}));
  for (int i = 0; i < 4000; ++i) {
    const Vec3 p{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
    q.coords.push_back(p);
    q.labels.push_back(shape.sdf(p) < 0);
    q.tags.push_back(PointSource::Volume);
  }
  SUBCASE("identity config returns the inputs") {
    auto [w, r] = apply_paired(v, q, zero_config(), rng);
    CHECK(r.coords == q.coords);
    CHECK(r.labels == q.labels);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(w.values[i] - v.values[i]) < 1e-6);
  }
  SUBCASE("correspondence and SDF label replay") {
    for (int trial = 0; trial < 10; ++trial) {
      AffineAugment a;
      auto [w, r] = apply_paired(v, q, AugmentConfig{}, rng, &a);
      CHECK(r.size() <= q.size());
      CHECK(r.size() > q.size() / 2);
      const Affine inv = a.matrix.inverse();
      auto moved_shape = shapes::warped(shape, a.matrix);
      std::size_t violations = 0;
      for (std::size_t i = 0; i < r.size(); ++i) {
        const Vec3 p = inv.apply(r.coords[i]);
        violations += (moved_shape.sdf(r.coords[i]) < 0) != (r.labels[i] == 1);
        // The 8 warped neighbours of r.coords[i] must all pull from inside the source hull.
        if (in_center_hull(p, 16, 0.25) && in_center_hull(r.coords[i], 16)) {
          CHECK(std::abs(sample_trilinear(w, r.coords[i]) - sample_trilinear(v, p)) < 1e-6);
        }
      }
      CHECK(violations == 0);
    }
  }
}

TEST_CASE("warp composition stays within interpolation error") {
  VolumeGrid v = unit_grid(32);
  const auto f = v.frame();
  auto smooth = [](const Vec3& q) { return std::sin(2 * q.x) * std::cos(1.5 * q.y) + 0.5 * q.z * q.z; };
  for (int k = 0; k < 32; ++k)
    for (int j = 0; j < 32; ++j)
      for (int i = 0; i < 32; ++i) v.at(i, j, k) = smooth(f.voxel_center_normalized(i, j, k));
  const Affine a = Affine::rotate_xyz({0.1, 0, 0.05}), b = Affine::translate({0.03, -0.02, 0}) * Affine::scale({1.02, 1, 0.98});
  auto twice = warp_volume(warp_volume(v, a), b);
  auto once = warp_volume(v, b * a);
  double worst = 0;
  for (int k = 4; k < 28; ++k)
    for (int j = 4; j < 28; ++j)
      for (int i = 4; i < 28; ++i) worst = std::max(worst, std::abs(twice.at(i, j, k) - once.at(i, j, k)));
  // Two trilinear passes on h = 1/16: error bounded by ~2 * h^2 * max|f''| / 8.
  CHECK(worst < 2 * (1.0 / 256) * 4 / 8 * 2);
}
