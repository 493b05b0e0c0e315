#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "organocc/metrics.hpp"
#include "organocc/pipeline.hpp"
#include "organocc/synth.hpp"

namespace organocc {

enum class LabelSource { Exact, Mask };
enum class InferMode { Dense, Patch };

// Everything one end-to-end run needs; its canonical JSON fingerprint is
// embedded in every artifact the run writes.
struct ExperimentConfig {
  std::string name = "custom";
  DatasetTemplate data;
  std::size_t scenes = 20;
  std::uint64_t seed = 0;
  QueryBudget budget{16384, {16384}, {{0.5, 0.1}, {0.5, 0.01}}};
  LabelSource labels = LabelSource::Exact;
  TrainConfig train;
  // Whole-mode input grid; {0,0,0} keeps the scene resolution.
  Dims3 input_dims{0, 0, 0};
  InferMode infer = InferMode::Dense;
  int out_scale = 2;  // output grid = scene dims * out_scale
  Dims3 patch_size{32, 32, 32};
  ReconstructOptions recon;
  std::size_t surface_points = 10000;
  bool baseline = false;  // explicit nearest-neighbour baseline
  // Test scenes are re-posed by a held-out random affine when set.
  bool posed_test = false;
  AugmentConfig pose_cfg;
  int threads = 1;

  void validate() const;
  std::string to_json() const;
  static ExperimentConfig from_json(const std::string& text);
  std::string fingerprint() const;
};

// Named presets: single-organ, multi-organ-single-decoder,
// multi-organ-multi-decoder, augmentation-on, augmentation-off, plus the
// ablation variants used by acceptance (labels-exact, labels-mask,
// patch-capsule, whole-capsule). `quick` shrinks the budget for smoke runs.
ExperimentConfig experiment_preset(const std::string& name, std::uint64_t seed, bool quick = false);
std::vector<std::string> preset_names();

struct SceneReport {
  std::size_t scene = 0;
  MetricsReport implicit;
  MetricsReport baseline;  // empty organs when disabled
};

struct ExperimentResult {
  MetricsReport summary;           // mean over test scenes
  MetricsReport baseline_summary;  // mean over test scenes, when enabled
  std::vector<SceneReport> scenes;
  TrainResult training;
  double train_seconds = 0;
};

// Root seed of the generated dataset and the query stream of scene `scene`.
std::uint64_t dataset_seed(const ExperimentConfig& cfg);
Rng query_rng(const ExperimentConfig& cfg, std::size_t scene);

// Prepared network input of a scene (resampled to cfg.input_dims when set).
VolumeGrid model_input(const Scene& s, const ExperimentConfig& cfg);

// Query points for one scene under the configured label source.
TrainSample make_sample(const Scene& s, const ExperimentConfig& cfg, Rng& rng);

// Scene re-posed by an affine acting on normalized coordinates.
Scene pose_scene(const Scene& s, const Affine& normalized_transform);

// Metrics of one organ; an empty reconstruction yields infinite distances.
OrganMetrics evaluate_organ(const VolumeGrid& prob, const Scene& s, std::size_t organ, const ExperimentConfig& cfg,
                            std::uint64_t seed);

// Generates data, trains, reconstructs the test split and evaluates it. When
// `out_dir` is non-empty, writes checkpoint, loss CSV, meshes and reports.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir = "");

}  // namespace organocc
