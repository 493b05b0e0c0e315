#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "organocc/error.hpp"
#include "organocc/io.hpp"
#include "organocc/pipeline.hpp"
#include "organocc/shapes.hpp"
#include "organocc/synth.hpp"

using namespace organocc;

namespace {

ModelConfig tiny_model(int organs = 1) {
  ModelConfig m;
  m.base_channels = 2;
  m.hidden_dim = 8;
  m.organs = organs;
  return m;
}

VolumeGrid random_input(int n, std::uint64_t seed) {
  VolumeGrid v = VolumeGrid::from_frame(scene_frame({n, n, n}));
  Rng rng(seed);
  for (auto& x : v.values) x = uniform(rng, -1, 1);
  return prepare_input(v);
}

// Sphere scene with analytic labels: a small, easy training problem.
TrainSample sphere_sample(int n, double radius, std::uint64_t seed, std::size_t points = 4000) {
  SceneSpec spec;
  OrganSpec o;
  Primitive p;
  p.radii = {radius, radius, radius};
  o.parts = {p};
  spec.organs = {o};
  spec.dims = {n, n, n};
  spec.noise_std = 0.02;
  spec.seed = seed;
  spec.mesh_factor = 2;
  const Scene s = generate_scene(spec);
  TrainSample t;
  t.volume = prepare_input(s.volume);
  Rng rng(seed);
  QueryBudget b{points, {points}, {{0.5, 0.1}, {0.5, 0.01}}};
  t.queries = build_queryset(s.shapes, s.meshes, s.volume, b, rng);
  return t;
}

std::string checkpoint_bytes(const TrainResult& r, const std::string& name) {
  // Same file name everywhere: the manifest records its payload's name.
  const auto dir = std::filesystem::temp_directory_path() / "organocc_test_pipeline" / name;
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "ckpt.json").string();
  save_checkpoint(r.net, r.state, path);
  const auto bin = read_bytes(path + ".bin");
  return read_text(path) + std::string(bin.begin(), bin.end());
}

}  // namespace

TEST_CASE("hann window") {
  const auto w = hann_window(4, false, false);
  CHECK(w[0] == 0.0);
  CHECK(std::abs(w[1] - 0.5) < 1e-15);
  CHECK(w[2] == 1.0);
  CHECK(std::abs(w[3] - 0.5) < 1e-15);
  // hop 2: interior sums are exactly the identity.
  CHECK(std::abs(w[0] + w[2] - 1) < 1e-15);
  CHECK(std::abs(w[1] + w[3] - 1) < 1e-15);
  for (double x : hann_window(64, false, false)) {
    CHECK(x >= 0);
    CHECK(x <= 1);
  }
  const auto lo = hann_window(8, true, false);
  for (int i = 0; i < 4; ++i) CHECK(lo[i] == 1.0);
  CHECK_THROWS_AS(hann_window(5, false, false), Error);
}

TEST_CASE("weight field is one with stride = patch/2") {
  for (int n : {64, 40, 32}) {
    CAPTURE(n);
    const PatchLayout layout = plan_patches({n, n, n}, {32, 32, 32}, {16, 16, 16});
    const VolumeGrid w = hann_weight_field(layout, 2);
    CHECK(w.dims == Dims3{layout.padded_dims[0] * 2, layout.padded_dims[1] * 2, layout.padded_dims[2] * 2});
    double worst = 0;
    for (double x : w.values) worst = std::max(worst, std::abs(x - 1));
    CHECK(worst < 1e-6);
  }
  const PatchLayout bad = plan_patches({64, 64, 64}, {32, 32, 32}, {8, 8, 8});
  CHECK_THROWS_AS(hann_weight_field(bad, 1), Error);
}

TEST_CASE("dense inference") {
  Network<float> net(tiny_model(2), 5);
  const VolumeGrid v = random_input(16, 2);
  SUBCASE("at the input resolution it equals forward() bitwise") {
    const auto grids = infer_dense(net, v, v.dims);
    const auto pts = grid_points(v.dims);
    const auto ref = net.forward(volume_tensor<float>(v), pts);
    for (int o = 0; o < 2; ++o)
      for (std::size_t i = 0; i < pts.size(); ++i)
        if (grids[o].values[i] != static_cast<double>(ref[o * pts.size() + i])) FAIL("mismatch at " << i);
    CHECK(grids[0].frame().same_grid(v.frame()));
  }
  SUBCASE("2x output, chunking and threads") {
    const auto a = infer_dense(net, v, {32, 32, 32}, 1 << 20, 1);
    const auto b = infer_dense(net, v, {32, 32, 32}, 777, 1);
    const auto c = infer_dense(net, v, {32, 32, 32}, 1000, 3);
    CHECK(a[0].dims == Dims3{32, 32, 32});
    CHECK(std::abs(a[0].spacing.x - v.spacing.x / 2) < 1e-12);
    for (int o = 0; o < 2; ++o) {
      CHECK(a[o].values == b[o].values);
      CHECK(a[o].values == c[o].values);
      for (double x : a[o].values) {
        CHECK(x >= 0);
        CHECK(x <= 1);
      }
    }
  }
  SUBCASE("input dims must be divisible by 16") {
    CHECK_THROWS_AS(infer_dense(net, random_input(24, 1), {24, 24, 24}), Error);
  }
}

TEST_CASE("patch-wise inference") {
  Network<float> net(tiny_model(), 6);
  SUBCASE("one patch matches dense bitwise") {
    const VolumeGrid v = random_input(16, 3);
    const auto p = infer_patchwise(net, v, {16, 16, 16}, {8, 8, 8}, 2);
    const auto d = infer_dense(net, v, {32, 32, 32});
    CHECK(p[0].values == d[0].values);
  }
  SUBCASE("desk shape arithmetic and convexity") {
    const VolumeGrid v = random_input(32, 4);
    const auto p = infer_patchwise(net, v, {16, 16, 16}, {8, 8, 8}, 2, 1);
    CHECK(p[0].dims == Dims3{64, 64, 64});
    for (double x : p[0].values) {
      CHECK(x >= 0);
      CHECK(x <= 1);
    }
    const auto q = infer_patchwise(net, v, {16, 16, 16}, {8, 8, 8}, 2, 3);
    CHECK(p[0].values == q[0].values);
  }
  SUBCASE("non-multiple dims are padded and cropped") {
    const VolumeGrid v = random_input(16, 5);
    const VolumeGrid w = resample(v, {24, 24, 24});
    const auto p = infer_patchwise(net, w, {16, 16, 16}, {8, 8, 8}, 1);
    CHECK(p[0].dims == Dims3{24, 24, 24});
    CHECK(p[0].frame().same_grid(w.frame()));
  }
  SUBCASE("stride must be half the patch") {
    CHECK_THROWS_AS(infer_patchwise(net, random_input(32, 1), {16, 16, 16}, {16, 16, 16}, 1), Error);
  }
}

TEST_CASE("reconstruct") {
  const CoordinateFrame f = scene_frame({32, 32, 32});
  VolumeGrid zero = VolumeGrid::from_frame(f);
  CHECK(reconstruct(zero).empty());
  VolumeGrid occ = VolumeGrid::from_frame(f);
  for (int k = 0; k < 32; ++k)
    for (int j = 0; j < 32; ++j)
      for (int i = 0; i < 32; ++i) {
        const double r = norm(occ.world_of(i, j, k));
        occ.at(i, j, k) = 1.0 / (1.0 + std::exp((r - 20.0) / 2.0));
      }
  const TriMesh m4 = reconstruct(occ, {0.4, 0, 0.5}), m6 = reconstruct(occ, {0.6, 0, 0.5});
  CHECK(m6.signed_volume() <= m4.signed_volume());
  // Touching the grid border still closes thanks to the zero pad.
  VolumeGrid full = VolumeGrid::from_frame(f, 1.0);
  const TriMesh box = reconstruct(full);
  CHECK(box.is_closed());
  CHECK(box.signed_volume() > 0);
  VolumeGrid bad = zero;
  bad.values[0] = 1.5;
  CHECK_THROWS_AS(reconstruct(bad), Error);
}

TEST_CASE("nearest upsampling baseline") {
  VolumeGrid v({2, 1, 1}, {1, 1, 1}, {0, 0, 0});
  v.values = {0.7, 0.2};
  const VolumeGrid u = nearest_upsample_mask(v, {4, 2, 2});
  CHECK(u.at(0, 0, 0) == 1.0);
  CHECK(u.at(1, 1, 1) == 1.0);
  CHECK(u.at(2, 0, 0) == 0.0);
  CHECK(u.at(3, 1, 0) == 0.0);
  CHECK(std::abs(u.spacing.x - 0.5) < 1e-15);
}

TEST_CASE("patch draws") {
  // A 32^3 scene padded into a 64^3 air volume: most random patches are background.
  TrainSample s = sphere_sample(16, 0.5, 3, 2000);
  const double fill = *s.volume.fill;
  VolumeGrid big = pad_to_dims(s.volume, {48, 48, 48}, fill);
  TrainConfig cfg;
  cfg.mode = TrainMode::Patch;
  cfg.model = tiny_model();
  cfg.patch_size = {16, 16, 16};
  cfg.min_patch_points = 50;
  // Queries expressed in the padded volume's frame.
  QuerySet q = s.queries;
  for (auto& c : q.coords) c = big.frame().world_to_normalized(s.volume.frame().normalized_to_world(c));
  Rng rng(4);
  int rejected = 0;
  const auto shape = shapes::sphere({0, 0, 0}, 0.5 * kSceneHalfExtent);
  for (int t = 0; t < 100; ++t) {
    const PatchDraw d = draw_training_patch(big, q, cfg, rng);
    rejected += d.rejected;
    CHECK_FALSE(is_background_patch(d.patch));
    CHECK(d.queries.size() >= 50);
    // Patch-frame labels equal parent-frame labels of the same world points.
    for (std::size_t i = 0; i < d.queries.size(); i += 7) {
      const Vec3 world = d.patch.frame().normalized_to_world(d.queries.coords[i]);
      const bool analytic = shape.sdf(world) < 0;
      if (std::abs(shape.sdf(world)) > 1e-6) CHECK((d.queries.labels[i] == 1) == analytic);
    }
  }
  CHECK(rejected > 0);
  cfg.min_patch_points = 1u << 30;
  cfg.max_patch_draws = 5;
  CHECK_THROWS_AS(draw_training_patch(big, q, cfg, rng), Error);
}

TEST_CASE("training") {
  const TrainSample s = sphere_sample(32, 0.45, 7);
  TrainConfig cfg;
  cfg.model = tiny_model();
  cfg.model.hidden_dim = 16;
  cfg.lr = 3e-3;
  cfg.points = 512;
  cfg.seed = 11;
  cfg.val_every = 0;

  SUBCASE("identical seeds give identical checkpoints and traces") {
    cfg.epochs = 6;
    const auto a = train({s}, {}, cfg), b = train({s}, {}, cfg);
    CHECK(checkpoint_bytes(a, "a") == checkpoint_bytes(b, "b"));
    CHECK(loss_csv(a) == loss_csv(b));
    cfg.seed = 12;
    const auto c = train({s}, {}, cfg);
    CHECK(checkpoint_bytes(c, "c") != checkpoint_bytes(a, "a"));
  }
  SUBCASE("resuming reproduces the uninterrupted schedule") {
    cfg.epochs = 6;
    cfg.batch_size = 2;
    cfg.augment = true;
    const std::vector<TrainSample> set{s, sphere_sample(32, 0.35, 8), sphere_sample(32, 0.55, 9)};
    const auto full = train(set, {}, cfg);
    TrainConfig part = cfg;
    part.epochs = 2;
    const auto first = train(set, {}, part);
    const auto resumed = train(set, {}, cfg, &first);
    CHECK(resumed.state.step == full.state.step);
    CHECK(checkpoint_bytes(resumed, "r") == checkpoint_bytes(full, "f"));
    CHECK(loss_csv(resumed) == loss_csv(full));
    CHECK(resumed.epoch_loss == full.epoch_loss);
  }
  SUBCASE("checkpoint round trip resumes too") {
    cfg.epochs = 4;
    const auto full = train({s}, {}, cfg);
    TrainConfig part = cfg;
    part.epochs = 2;
    auto first = train({s}, {}, part);
    checkpoint_bytes(first, "mid");
    TrainResult loaded;
    load_checkpoint((std::filesystem::temp_directory_path() / "organocc_test_pipeline" / "mid" / "ckpt.json").string(),
                    loaded.net, loaded.state);
    loaded.best = clone_network(loaded.net);
    loaded.trace = first.trace;
    loaded.epoch_loss = first.epoch_loss;
    const auto resumed = train({s}, {}, cfg, &loaded);
    CHECK(checkpoint_bytes(resumed, "r2") == checkpoint_bytes(full, "f2"));
  }
  SUBCASE("loss decreases and best-validation model is kept") {
    cfg.epochs = 120;
    cfg.val_every = 10;
    const auto r = train({s}, {s}, cfg);
    REQUIRE(r.epoch_loss.size() == 120);
    double first = 0, last = 0;
    for (int e = 0; e < 10; ++e) first += r.epoch_loss[e], last += r.epoch_loss[110 + e];
    CHECK(last < 0.5 * first);
    CHECK(r.val_loss.size() == 12);
    CHECK(r.best_epoch >= 0);
    CHECK(r.best_val_loss == *std::min_element(r.val_loss.begin(), r.val_loss.end()));
    const auto csv = loss_csv(r);
    CHECK(csv.rfind("step,epoch,loss,organ_0\n", 0) == 0);
  }
  SUBCASE("degenerate inputs") {
    TrainSample flat = s;
    std::fill(flat.volume.values.begin(), flat.volume.values.end(), 0.0);
    cfg.epochs = 1;
    CHECK_THROWS_AS(train({flat}, {}, cfg), Error);
    TrainSample odd = s;
    odd.volume = resample(s.volume, {40, 40, 40});
    CHECK_THROWS_AS(train({odd}, {}, cfg), Error);
    CHECK_THROWS_AS(train({}, {}, cfg), Error);
  }
  SUBCASE("patch mode trains") {
    cfg.mode = TrainMode::Patch;
    cfg.patch_size = {32, 32, 32};
    cfg.epochs = 3;
    cfg.min_patch_points = 10;
    const TrainSample big = sphere_sample(48, 0.5, 10);
    const auto r = train({big}, {}, cfg);
    CHECK(r.state.step == 3);
  }
}

TEST_CASE("train config json") {
  TrainConfig c;
  c.mode = TrainMode::Patch;
  c.epochs = 7;
  c.augment = true;
  c.augment_cfg.rotation_deg = {5, 6, 7};
  c.model.variant = DecoderVariant::Single;
  c.model.organs = 2;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.fingerprint() == c.fingerprint());
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"batch_size": 0})"), Error);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"mode": "sideways"})"), Error);
}
