#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "organocc/error.hpp"
#include "organocc/geometry.hpp"
#include "organocc/shapes.hpp"

using namespace organocc;

namespace {

// 32^3 grid, unit spacing, binary occupancy of a sphere r=10 voxels at the center.
VolumeGrid sphere_occupancy(int n, double r) {
  VolumeGrid v({n, n, n}, {1, 1, 1}, {0, 0, 0});
  const Vec3 c{(n - 1) / 2.0, (n - 1) / 2.0, (n - 1) / 2.0};
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) v.at(i, j, k) = distance(v.world_of(i, j, k), c) < r ? 1.0 : 0.0;
  return v;
}

TriMesh tetrahedron() {
  TriMesh m;
  m.vertices = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  m.triangles = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
  return m;
}

// Subdivided icosahedron projected to a sphere of radius r.
TriMesh icosphere(int levels, double r) {
  const double t = (1 + std::sqrt(5.0)) / 2;
  TriMesh m;
  m.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  m.triangles = {{0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                 {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
                 {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
  for (auto& v : m.vertices) v = normalized(v);
  for (int l = 0; l < levels; ++l) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      const auto id = static_cast<std::uint32_t>(m.vertices.size());
      m.vertices.push_back(normalized((m.vertices[a] + m.vertices[b]) * 0.5));
      mid[key] = id;
      return id;
    };
    std::vector<Triangle> next;
    for (const auto& tr : m.triangles) {
      const auto a = midpoint(tr[0], tr[1]), b = midpoint(tr[1], tr[2]), c = midpoint(tr[2], tr[0]);
      next.push_back({tr[0], a, c});
      next.push_back({tr[1], b, a});
      next.push_back({tr[2], c, b});
      next.push_back({a, b, c});
    }
    m.triangles = std::move(next);
  }
  for (auto& v : m.vertices) v = v * r;
  return m;
}

}  // namespace

TEST_CASE("marching_cubes on empty grid") {
  VolumeGrid v({8, 8, 8}, {1, 1, 1}, {0, 0, 0}, 0.0);
  CHECK(marching_cubes(v, 0.5).empty());
}

TEST_CASE("marching_cubes sphere is watertight, outward, and near the analytic surface") {
  auto v = sphere_occupancy(32, 10);
  auto m = marching_cubes(v, 0.5);
  REQUIRE_FALSE(m.empty());
  m.validate();
  CHECK(m.is_closed());
  CHECK(m.signed_volume() > 0);
  const Vec3 c{15.5, 15.5, 15.5};
  double worst = 0;
  for (const auto& p : m.vertices) worst = std::max(worst, std::abs(distance(p, c) - 10));
  CHECK(worst < 0.87);
}

TEST_CASE("marching_cubes vertices interpolate the iso value along their edge") {
  VolumeGrid v({12, 12, 12}, {1, 1, 1}, {0, 0, 0});
  for (int k = 0; k < 12; ++k)
    for (int j = 0; j < 12; ++j)
      for (int i = 0; i < 12; ++i) v.at(i, j, k) = 1.0 - distance(v.world_of(i, j, k), {5.5, 5.3, 5.9}) / 4.0;
  auto m = marching_cubes(v, 0.3);
  REQUIRE_FALSE(m.empty());
  CHECK(m.is_closed());
  for (const auto& p : m.vertices) {
    // The field is sampled on integer lattice points; a vertex lies on a lattice edge.
    int axis = -1;
    for (int a = 0; a < 3; ++a)
      if (std::abs(p[a] - std::round(p[a])) > 1e-12) axis = a;
    Vec3 lo = p, hi = p;
    if (axis >= 0) {
      lo[axis] = std::floor(p[axis]);
      hi[axis] = lo[axis] + 1;
    }
    const double va = v.at(int(std::round(lo.x)), int(std::round(lo.y)), int(std::round(lo.z)));
    const double vb = v.at(int(std::round(hi.x)), int(std::round(hi.y)), int(std::round(hi.z)));
    const double t = axis >= 0 ? p[axis] - lo[axis] : 0.0;
    CHECK(std::abs(va + (vb - va) * t - 0.3) < 1e-5);
  }
}

TEST_CASE("marching_cubes single corner case yields one triangle") {
  VolumeGrid v({2, 2, 2}, {1, 1, 1}, {0, 0, 0}, 0.0);
  v.at(0, 0, 0) = 1.0;
  auto m = marching_cubes(v, 0.5);
  CHECK(m.triangles.size() == 1);
  CHECK(m.vertices.size() == 3);
  // Normal points away from the high corner.
  const auto& t = m.triangles[0];
  const Vec3 n = cross(m.vertices[t[1]] - m.vertices[t[0]], m.vertices[t[2]] - m.vertices[t[0]]);
  CHECK(dot(n, Vec3{1, 1, 1}) > 0);
}

TEST_CASE("smooth_mesh") {
  auto tet = tetrahedron();
  SUBCASE("zero iterations is identity") {
    auto s = smooth_mesh(tet, 0, 0.5);
    CHECK(s.vertices == tet.vertices);
  }
  SUBCASE("lambda 1 maps each vertex to the centroid of the other three") {
    auto s = smooth_mesh(tet, 1, 1.0);
    for (std::size_t i = 0; i < 4; ++i) {
      Vec3 c{0, 0, 0};
      for (std::size_t j = 0; j < 4; ++j)
        if (j != i) c += tet.vertices[j];
      c = c / 3.0;
      CHECK(distance(s.vertices[i], c) < 1e-12);
    }
    CHECK(s.triangles == tet.triangles);
  }
  SUBCASE("reduces staircase deviation of a marching-cubes sphere") {
    auto m = marching_cubes(sphere_occupancy(32, 10), 0.5);
    const Vec3 c{15.5, 15.5, 15.5};
    auto max_dev = [&](const TriMesh& mm) {
      double w = 0;
      for (const auto& p : mm.vertices) w = std::max(w, std::abs(distance(p, c) - 10));
      return w;
    };
    auto s = smooth_mesh(m, 5, 0.5);
    CHECK(s.vertices.size() == m.vertices.size());
    CHECK(s.triangles == m.triangles);
    CHECK(max_dev(s) < max_dev(m));
  }
}

TEST_CASE("sample_surface") {
  Rng rng(42);
  SUBCASE("sigma zero puts every point on a triangle") {
    auto m = icosphere(1, 1.0);
    auto pts = sample_surface_points(m, 500, {{1.0, 0.0}}, rng);
    for (const auto& p : pts) {
      bool on = false;
      for (const auto& t : m.triangles) {
        const Vec3 a = m.vertices[t[0]], b = m.vertices[t[1]], c = m.vertices[t[2]];
        const double total = triangle_area(a, b, c);
        const double parts = triangle_area(p, b, c) + triangle_area(a, p, c) + triangle_area(a, b, p);
        if (std::abs(parts - total) < 1e-9 * (1 + total)) {
          on = true;
          break;
        }
      }
      CHECK(on);
    }
  }
  SUBCASE("displacement RMS matches sigma*sqrt(3) per partition") {
    auto m = icosphere(2, 1.0);
    auto s = sample_surface(m, 10000, {{0.5, 0.1}, {0.5, 0.01}}, rng);
    double acc[2] = {0, 0};
    int cnt[2] = {0, 0};
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      acc[s.partition[i]] += squared_norm(s.points[i] - s.base[i]);
      cnt[s.partition[i]]++;
    }
    CHECK(cnt[0] == 5000);
    CHECK(cnt[1] == 5000);
    CHECK(std::sqrt(acc[0] / cnt[0]) == doctest::Approx(0.1 * std::sqrt(3.0)).epsilon(0.05));
    CHECK(std::sqrt(acc[1] / cnt[1]) == doctest::Approx(0.01 * std::sqrt(3.0)).epsilon(0.05));
  }
  SUBCASE("area weighting: areas 1 and 3 get 25/75 percent") {
    TriMesh m;
    m.vertices = {{0, 0, 0}, {2, 0, 0}, {0, 1, 0}, {10, 0, 0}, {16, 0, 0}, {10, 1, 0}};
    m.triangles = {{0, 1, 2}, {3, 4, 5}};
    auto pts = sample_surface_points(m, 100000, {{1.0, 0.0}}, rng);
    std::size_t second = 0;
    for (const auto& p : pts) second += p.x >= 10 - 1e-12;
    CHECK(double(second) / pts.size() == doctest::Approx(0.75).epsilon(0.04));
  }
  SUBCASE("empty mesh") { CHECK_THROWS_AS(sample_surface_points(TriMesh{}, 10, {{1.0, 0.0}}, rng), Error); }
}

TEST_CASE("point_occupancy against an implicit sphere") {
  auto s = shapes::sphere({0, 0, 0}, 10);
  auto occ = point_occupancy(s, {{5, 0, 0}, {15, 0, 0}, {10, 0, 0}});
  CHECK(occ == std::vector<std::uint8_t>{1, 0, 0});
}

TEST_CASE("point_occupancy is invariant under a joint rigid motion") {
  auto base = shapes::ellipsoid({0.1, -0.2, 0.3}, {0.5, 0.3, 0.2});
  const Affine rigid = Affine::translate({0.3, -0.1, 0.2}) * Affine::rotate_xyz({0.4, -0.7, 1.1});
  auto moved = shapes::warped(base, rigid);
  Rng rng(9);
  std::vector<Vec3> pts, moved_pts;
  for (int i = 0; i < 2000; ++i) {
    const Vec3 p{uniform(rng, -0.8, 0.8), uniform(rng, -0.8, 0.8), uniform(rng, -0.8, 0.8)};
    if (std::abs(base.sdf(p)) < 1e-9) continue;
    pts.push_back(p);
    moved_pts.push_back(rigid.apply(p));
  }
  CHECK(point_occupancy(base, pts) == point_occupancy(moved, moved_pts));
}

TEST_CASE("ray parity on an icosphere agrees with the analytic sphere") {
  auto m = icosphere(4, 1.0);
  REQUIRE(m.is_closed());
  auto s = shapes::sphere({0, 0, 0}, 1.0);
  Rng rng(123);
  std::vector<Vec3> pts;
  while (pts.size() < 10000) {
    const Vec3 p{uniform(rng, -1.5, 1.5), uniform(rng, -1.5, 1.5), uniform(rng, -1.5, 1.5)};
    if (std::abs(s.sdf(p)) > 0.05) pts.push_back(p);
  }
  auto ray = point_occupancy(m, pts);
  auto sdf = point_occupancy(s, pts);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) agree += ray[i] == sdf[i];
  CHECK(double(agree) / pts.size() >= 0.999);
}

TEST_CASE("ray parity handles rays through vertices and edges") {
  auto m = tetrahedron();
  // Rays along +x from these points pass exactly through mesh vertices/edges.
  std::vector<Vec3> pts{{-5, 1, 1}, {-5, -1, -1}, {-5, 0, 0}, {0, 0, 0}, {0.2, 0.1, 0.0}, {5, 0, 0}};
  auto occ = point_occupancy(m, pts);
  CHECK(occ == std::vector<std::uint8_t>{0, 0, 0, 1, 1, 0});
}

TEST_CASE("ray parity rejects open meshes") {
  auto m = tetrahedron();
  m.triangles.pop_back();
  try {
    point_occupancy(m, {{0, 0, 0}});
    FAIL("expected topology error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Topology);
  }
}

TEST_CASE("OBJ round trip") {
  auto m = icosphere(1, 2.5);
  const auto path = (std::filesystem::temp_directory_path() / "organocc_obj_roundtrip.obj").string();
  write_obj(m, path, "test mesh");
  auto r = read_obj(path);
  CHECK(r.vertices == m.vertices);
  CHECK(r.triangles == m.triangles);
  std::remove(path.c_str());
}

TEST_CASE("analytic primitives") {
  SUBCASE("sphere") {
    auto s = shapes::sphere({0, 0, 0}, 0.5);
    CHECK(s.sdf({0, 0, 0}) == doctest::Approx(-0.5));
    CHECK(s.sdf({0.7, 0, 0}) == doctest::Approx(0.2));
  }
  SUBCASE("capsule") {
    auto c = shapes::capsule({-0.3, 0, 0}, {0.3, 0, 0}, 0.2);
    CHECK(std::abs(c.sdf({0, 0.2, 0})) < 1e-15);
    CHECK(c.sdf({0.5, 0, 0}) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(c.sdf({0.6, 0, 0}) == doctest::Approx(0.1));
  }
  SUBCASE("ellipsoid distance matches dense surface search") {
    const Vec3 radii{0.6, 0.35, 0.2};
    auto e = shapes::ellipsoid({0, 0, 0}, radii);
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
      const Vec3 p{uniform(rng, -0.9, 0.9), uniform(rng, -0.6, 0.6), uniform(rng, -0.5, 0.5)};
      double best = 1e300;
      const int nt = 600, np = 1200;
      for (int a = 0; a <= nt; ++a) {
        const double th = M_PI * a / nt;
        for (int b = 0; b < np; ++b) {
          const double ph = 2 * M_PI * b / np;
          const Vec3 q{radii.x * std::sin(th) * std::cos(ph), radii.y * std::sin(th) * std::sin(ph),
                       radii.z * std::cos(th)};
          best = std::min(best, distance(p, q));
        }
      }
      const double d = std::abs(e.sdf(p));
      CHECK(d <= best + 1e-12);
      CHECK(best - d < 2e-4);
    }
  }
  SUBCASE("ellipsoid points on principal planes and axes") {
    const Vec3 radii{0.6, 0.35, 0.2};
    auto e = shapes::ellipsoid({0, 0, 0}, radii);
    CHECK(e.sdf({0, 0, 0}) == doctest::Approx(-0.2));
    CHECK(e.sdf({0.8, 0, 0}) == doctest::Approx(0.2));
    CHECK(e.sdf({0, 0.5, 0}) == doctest::Approx(0.15));
    CHECK(e.sdf({0, 0, -0.1}) == doctest::Approx(-0.1));
  }
  SUBCASE("ellipsoid with equal radii is a sphere") {
    auto e = shapes::ellipsoid({0.1, 0.2, 0.3}, {0.4, 0.4, 0.4});
    auto s = shapes::sphere({0.1, 0.2, 0.3}, 0.4);
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
      const Vec3 p{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
      CHECK(e.sdf(p) == doctest::Approx(s.sdf(p)).epsilon(1e-9));
    }
  }
  SUBCASE("smooth union is below both inputs and equals min far apart") {
    auto a = shapes::sphere({-0.5, 0, 0}, 0.2), b = shapes::sphere({0.5, 0, 0}, 0.2);
    auto u = shapes::smooth_union(a, b, 0.1);
    CHECK(u.sdf({-0.5, 0, 0}) == doctest::Approx(-0.2));
    CHECK(u.sdf({0, 0, 0}) <= std::min(a.sdf({0, 0, 0}), b.sdf({0, 0, 0})));
  }
  SUBCASE("perturbation stays within its amplitude") {
    auto base = shapes::sphere({0, 0, 0}, 0.5);
    auto p = shapes::perturbed(base, {0, 0, 0}, 0.03, 4.0, {0.3, 1.1, 2.0});
    Rng rng(8);
    for (int i = 0; i < 500; ++i) {
      const Vec3 q{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
      CHECK(std::abs(p.sdf(q) - base.sdf(q)) <= 0.03 + 1e-15);
    }
  }
}
