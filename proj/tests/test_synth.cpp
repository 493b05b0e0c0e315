#include <chrono>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "organocc/error.hpp"
#include "organocc/io.hpp"
#include "organocc/sampling.hpp"
#include "organocc/shapes.hpp"
#include "organocc/synth.hpp"

using namespace organocc;

namespace {

SceneSpec one_sphere(double noise = 0) {
  SceneSpec s;
  OrganSpec o;
  Primitive p;
  p.radii = {0.5, 0.5, 0.5};
  o.parts = {p};
  o.level = 1.0;
  s.organs = {o};
  s.noise_std = noise;
  s.body_radius = 0;
  s.dims = {24, 24, 24};
  s.seed = 3;
  return s;
}

}  // namespace

TEST_CASE("primitive SDF examples") {
  const auto s = shapes::sphere({0, 0, 0}, 0.5);
  CHECK(s.sdf({0, 0, 0}) == -0.5);
  CHECK(std::abs(s.sdf({0.7, 0, 0}) - 0.2) < 1e-15);
  const auto c = shapes::capsule({-0.3, 0, 0}, {0.3, 0, 0}, 0.2);
  CHECK(std::abs(c.sdf({0, 0.2, 0})) < 1e-15);
  // Organ shapes are spec geometry scaled to mm.
  OrganSpec o;
  Primitive p;
  p.radii = {0.5, 0.5, 0.5};
  o.parts = {p};
  CHECK(std::abs(organ_shape(o).sdf({0.7 * kSceneHalfExtent, 0, 0}) - 0.2 * kSceneHalfExtent) < 1e-9);
}

TEST_CASE("generate_scene intensities") {
  SUBCASE("zero noise sphere interior is exact") {
    const Scene sc = generate_scene(one_sphere());
    const auto& v = sc.volume;
    const double voxel = v.spacing.x;
    int inside = 0;
    for (int k = 0; k < 24; ++k)
      for (int j = 0; j < 24; ++j)
        for (int i = 0; i < 24; ++i) {
          const double d = sc.shapes[0].sdf(v.world_of(i, j, k));
          // Box support reaches sqrt(3) voxels.
          if (d < -std::sqrt(3.0) * voxel) {
            CHECK(v.at(i, j, k) == 1.0);
            ++inside;
          }
          if (d > std::sqrt(3.0) * voxel) CHECK(v.at(i, j, k) == 0.0);
        }
    CHECK(inside > 100);
  }
  SUBCASE("same seed gives bitwise identical scenes") {
    auto spec = one_sphere(0.05);
    spec.body_radius = 0.95;
    const Scene a = generate_scene(spec), b = generate_scene(spec);
    CHECK(a.volume.values == b.volume.values);
    CHECK(a.meshes[0].vertices == b.meshes[0].vertices);
    spec.seed = 4;
    CHECK(generate_scene(spec).volume.values != a.volume.values);
  }
  SUBCASE("air outside the body stays exactly background") {
    auto spec = one_sphere(0.1);
    spec.body_radius = 0.8;
    const Scene sc = generate_scene(spec);
    CHECK(sc.volume.at(0, 0, 0) == 0.0);
    CHECK(is_background_patch(extract_patch(sc.volume, {0, 0, 0}, {4, 4, 4})));
    CHECK_FALSE(is_background_patch(extract_patch(sc.volume, {8, 8, 8}, {8, 8, 8})));
  }
  SUBCASE("overlapping organs are rejected") {
    auto spec = one_sphere();
    OrganSpec o2 = spec.organs[0];
    o2.name = "second";
    o2.parts[0].center = {0.2, 0, 0};
    spec.organs.push_back(o2);
    CHECK_THROWS_AS(generate_scene(spec), Error);
  }
  SUBCASE("organs outside the limit box are rejected") {
    auto spec = one_sphere();
    spec.organs[0].parts[0].center = {0.5, 0, 0};
    CHECK_THROWS_AS(spec.validate(), Error);
  }
}

TEST_CASE("sdf_grid acceleration keeps signs and surface cells exact") {
  DatasetTemplate t;
  t.kind = ScenarioKind::LargeAndCapsule;
  const SceneSpec spec = random_scene_spec(t, 99);
  const CoordinateFrame f = scene_frame({48, 48, 48});
  for (std::size_t o = 0; o < spec.organs.size(); ++o) {
    const auto shape = organ_shape(spec.organs[o]);
    const VolumeGrid fast = sdf_grid(shape, f, 4, 1.5, 2 * spec.organs[o].amplitude * kSceneHalfExtent);
    const VolumeGrid full = sdf_grid(shape, f, 1);
    std::size_t sign_mismatch = 0;
    for (std::size_t i = 0; i < full.size(); ++i) sign_mismatch += (fast.values[i] < 0) != (full.values[i] < 0);
    CHECK(sign_mismatch == 0);
    const TriMesh a = marching_cubes(fast, 0.0), b = marching_cubes(full, 0.0);
    CHECK(a.vertices == b.vertices);
    CHECK(a.triangles == b.triangles);
  }
}

TEST_CASE("oracle consistency") {
  for (auto kind : {ScenarioKind::SingleOrgan, ScenarioKind::ContactPair, ScenarioKind::LargeAndCapsule}) {
    CAPTURE(to_string(kind));
    DatasetTemplate t;
    t.kind = kind;
    const Scene sc = generate_scene(random_scene_spec(t, 17));
    const double fine_voxel = 2 * kSceneHalfExtent / (32 * 4);
    Rng rng(5);
    for (std::size_t o = 0; o < sc.organs(); ++o) {
      CHECK(sc.meshes[o].is_closed());
      CHECK(sc.meshes[o].signed_volume() > 0);
      const Aabb box = sc.shapes[o].bounds().expanded(2);
      std::vector<Vec3> pts;
      std::vector<double> sd;
      while (pts.size() < 4000) {
        const Vec3 p{uniform(rng, box.lo.x, box.hi.x), uniform(rng, box.lo.y, box.hi.y), uniform(rng, box.lo.z, box.hi.z)};
        const double d = sc.shapes[o].sdf(p);
        if (std::abs(d) <= fine_voxel / 2) continue;
        pts.push_back(p);
        sd.push_back(d);
      }
      const auto mesh_occ = point_occupancy(sc.meshes[o], pts);
      std::size_t agree = 0;
      for (std::size_t i = 0; i < pts.size(); ++i) agree += (sd[i] < 0) == (mesh_occ[i] == 1);
      CHECK(static_cast<double>(agree) / pts.size() >= 0.999);
      // Voxelized masks agree with the sign beyond one fine voxel.
      const VolumeGrid mask = voxelize(sc.shapes[o], sc.volume.frame());
      for (std::size_t i = 0; i < mask.size(); ++i) {
        const double d = sc.shapes[o].sdf(sc.volume.frame().index_to_world(
            {double(i % 32), double((i / 32) % 32), double(i / 1024)}));
        if (std::abs(d) > fine_voxel) CHECK((mask.values[i] == 1) == (d < 0));
      }
    }
  }
}

TEST_CASE("contact scenario geometry") {
  DatasetTemplate t;
  t.kind = ScenarioKind::ContactPair;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SceneSpec spec = random_scene_spec(t, seed);
    REQUIRE(spec.organs.size() == 2);
    const auto a = organ_shape(spec.organs[0]), b = organ_shape(spec.organs[1]);
    const double voxel = 2 * kSceneHalfExtent / 32;
    // Dense scan: no point inside both, and the closest pair of surfaces is
    // within one voxel (sampled on the small sphere's surface).
    const CoordinateFrame f = scene_frame({64, 64, 64});
    for (int k = 0; k < 64; ++k)
      for (int j = 0; j < 64; ++j)
        for (int i = 0; i < 64; ++i) {
          const Vec3 p = f.index_to_world({double(i), double(j), double(k)});
          if (a.sdf(p) < 0 && b.sdf(p) < 0) FAIL("negative regions overlap");
        }
    const Vec3 c = spec.organs[1].parts[0].center * kSceneHalfExtent;
    const double rs = spec.organs[1].parts[0].radii.x * kSceneHalfExtent;
    double gap = INFINITY;
    Rng rng(seed);
    for (int s = 0; s < 20000; ++s) {
      Vec3 d{standard_normal(rng), standard_normal(rng), standard_normal(rng)};
      gap = std::min(gap, a.sdf(c + normalized(d) * rs));
    }
    CHECK(gap > 0);
    CHECK(gap <= voxel);
  }
}

TEST_CASE("make_dataset") {
  DatasetTemplate t;
  // The second run also uses workers; scenes must not depend on scheduling.
  const auto d1 = make_dataset(20, t, 42), d2 = make_dataset(20, t, 42, 3);
  CHECK(d1.train.size() == 10);
  CHECK(d1.val.size() == 5);
  CHECK(d1.test.size() == 5);
  CHECK(d1.train == d2.train);
  CHECK(d1.test == d2.test);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(d1.scenes[i].volume.values == d2.scenes[i].volume.values);
    CHECK_NOTHROW(d1.scenes[i].spec.validate());
    seeds.push_back(d1.scenes[i].spec.seed);
  }
  std::sort(seeds.begin(), seeds.end());
  CHECK(std::adjacent_find(seeds.begin(), seeds.end()) == seeds.end());
  const auto small = make_dataset(3, t, 1);
  CHECK(small.train.size() == 1);
  CHECK(small.val.size() == 1);
  CHECK(small.test.size() == 1);
  CHECK_THROWS_AS(make_dataset(2, t, 1), Error);
}

TEST_CASE("scene persistence") {
  DatasetTemplate t;
  t.kind = ScenarioKind::ContactPair;
  const Scene sc = generate_scene(random_scene_spec(t, 8));
  const auto dir = std::filesystem::temp_directory_path() / "organocc_test_synth";
  std::filesystem::create_directories(dir);
  save_scene(sc, dir.string(), "scene0", R"({"config_fingerprint":"abc"})");
  const Scene back = load_scene(dir.string(), "scene0");
  CHECK(back.spec.to_json() == sc.spec.to_json());
  CHECK(back.meshes.size() == 2);
  CHECK(back.meshes[1].triangles == sc.meshes[1].triangles);
  for (std::size_t i = 0; i < sc.volume.size(); ++i)
    CHECK(back.volume.values[i] == static_cast<double>(static_cast<float>(sc.volume.values[i])));
  CHECK(read_text((dir / "scene0.vol").string()).find("abc") != std::string::npos);
  const Vec3 p{3, 1, -2};
  CHECK(back.shapes[0].sdf(p) == sc.shapes[0].sdf(p));
  std::filesystem::remove_all(dir);
}

TEST_CASE("64^3 scene generation cost") {
  DatasetTemplate t;
  t.kind = ScenarioKind::LargeAndCapsule;
  t.dims = {64, 64, 64};
  const auto t0 = std::chrono::steady_clock::now();
  const Scene sc = generate_scene(random_scene_spec(t, 1));
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("64^3 two-organ scene: " << s << " s, triangles " << sc.meshes[0].triangles.size());
  CHECK(s < 60);
}
