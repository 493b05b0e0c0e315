// Desk-model training on a single sphere scene (about a minute of CPU).
#include <numeric>

#include "doctest.h"
#include "organocc/experiment.hpp"
#include "organocc/metrics.hpp"

using namespace organocc;

namespace {

constexpr int kEpochs = 200;
constexpr int kFinalWindow = 10;      // "final loss" = mean of the last 10 epochs
constexpr int kTrendBlock = 40;       // trend = means of consecutive 40-epoch blocks
constexpr double kFinalLossMax = 0.05;

double mean(const std::vector<double>& v, std::size_t b, std::size_t e) {
  return std::accumulate(v.begin() + b, v.begin() + e, 0.0) / static_cast<double>(e - b);
}

}  // namespace

TEST_CASE("desk model on one sphere scene") {
  SceneSpec spec;
  OrganSpec organ;
  Primitive p;
  p.radii = {0.5, 0.5, 0.5};
  organ.parts = {p};
  spec.organs = {organ};
  spec.dims = {32, 32, 32};
  spec.seed = 7;
  const Scene scene = generate_scene(spec);

  ExperimentConfig cfg = experiment_preset("single-organ", 7);
  cfg.train.epochs = kEpochs;
  cfg.train.val_every = 0;
  Rng rng(7);
  const TrainSample sample = make_sample(scene, cfg, rng);
  const TrainResult r = train({sample}, {}, cfg.train);
  const auto& el = r.epoch_loss;
  REQUIRE(el.size() == kEpochs);

  const double final_loss = mean(el, kEpochs - kFinalWindow, kEpochs);
  MESSAGE("final training loss " << final_loss);
  CHECK(final_loss < kFinalLossMax);
  for (int b = kTrendBlock; b + kTrendBlock <= kEpochs; b += kTrendBlock)
    CHECK(mean(el, b, b + kTrendBlock) < mean(el, b - kTrendBlock, b));

  Network<float> net = clone_network(r.net);
  {  // interior above 0.5, distant exterior below
    const auto pr = net.forward(volume_tensor<float>(sample.volume), {{0, 0, 0}, {0.2, 0.1, -0.1}, {0.95, 0.95, 0.95},
                                                                       {-0.9, 0.9, -0.9}});
    CHECK(pr[0] > 0.5f);
    CHECK(pr[1] > 0.5f);
    CHECK(pr[2] < 0.5f);
    CHECK(pr[3] < 0.5f);
  }
  {  // 2x reconstruction is closer than one input voxel
    const auto probs = infer_dense(net, sample.volume, {64, 64, 64});
    const TriMesh mesh = reconstruct(probs[0]);
    EvalOptions opt;
    opt.voxel_frame = probs[0].frame();
    const OrganMetrics m = evaluate(mesh, scene.meshes[0], opt, &scene.shapes[0]);
    MESSAGE("assd " << m.assd << " mm, input voxel " << scene.volume.spacing.x << " mm");
    CHECK(m.assd < scene.volume.spacing.x);
  }
}
