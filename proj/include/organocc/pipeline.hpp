#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "organocc/augment.hpp"
#include "organocc/geometry.hpp"
#include "organocc/model.hpp"
#include "organocc/sampling.hpp"
#include "organocc/volume.hpp"

namespace organocc {

enum class TrainMode { Whole, Patch };
const char* to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::Whole;
  ModelConfig model;
  int epochs = 100;
  int batch_size = 1;          // volumes per step (b)
  std::size_t points = 4096;   // query points per volume (n)
  double lr = 1e-4;
  double weight_decay = 1e-5;
  bool augment = false;
  AugmentConfig augment_cfg;
  std::uint64_t seed = 0;
  Dims3 patch_size{32, 32, 32};
  std::size_t min_patch_points = 256;  // n_min
  int max_patch_draws = 1000;
  int val_every = 1;  // epochs between validation passes; 0 disables
  std::size_t val_points = 4096;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  std::string fingerprint() const;
};

// A training volume (already intensity-normalized) with its query points.
struct TrainSample {
  VolumeGrid volume;
  QuerySet queries;
};

// z-score normalization; `fill` becomes the normalized minimum so padding and
// air read as background.
VolumeGrid prepare_input(const VolumeGrid& v);

struct PatchDraw {
  Dims3 offset{0, 0, 0};
  VolumeGrid patch;
  QuerySet queries;  // patch frame
  int rejected = 0;  // background or sparse draws before acceptance
};

// Uniform patch origin; background patches and patches with fewer than
// cfg.min_patch_points queries are redrawn (DegenerateInput after
// cfg.max_patch_draws attempts).
PatchDraw draw_training_patch(const VolumeGrid& v, const QuerySet& q, const TrainConfig& cfg, Rng& rng);

struct LossRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double loss = 0;
  std::vector<double> per_organ;
};

struct TrainResult {
  Network<float> net;       // parameters after the last step
  TrainingState state;
  Network<float> best;      // lowest validation loss (== net without validation)
  double best_val_loss = 0;
  int best_epoch = -1;
  std::vector<LossRecord> trace;        // per step
  std::vector<double> epoch_loss;       // mean training loss per epoch
  std::vector<double> val_loss;         // per validation pass
};

// Runs the fixed per-step schedule: step s draws its volumes, patch offsets,
// augmentations and points from streams derived from (seed, s). `resume`
// continues from a saved state; the result then matches an uninterrupted run.
TrainResult train(const std::vector<TrainSample>& train_set, const std::vector<TrainSample>& val_set,
                  const TrainConfig& cfg, const TrainResult* resume = nullptr);

// Loss trace as CSV: step,epoch,loss,organ_0,...
std::string loss_csv(const TrainResult& r);

// Voxel-center coordinates (normalized) of a grid with `dims` over [-1,1]^3.
std::vector<Vec3> grid_points(const Dims3& dims);

// Frame with `dims` covering the same world box as `f`.
CoordinateFrame refined_frame(const CoordinateFrame& f, const Dims3& dims);

// Per-organ probability grids at `out_dims`, sharing v's world box. `v` must
// be a prepared input whose dims are divisible by 16.
std::vector<VolumeGrid> infer_dense(Network<float>& net, const VolumeGrid& v, const Dims3& out_dims,
                                    std::size_t chunk = 32768, int threads = 1);

// Periodic Hann of length n with flat (=1) halves on sides that face the
// layout boundary.
std::vector<double> hann_window(int n, bool flat_low, bool flat_high);

// Pre-normalization weight field of a patch layout at output resolution.
VolumeGrid hann_weight_field(const PatchLayout& layout, int out_scale);

// Hann-blended patch inference; output dims = v.dims * out_scale. Patches are
// evaluated `threads` at a time and accumulated in layout order.
std::vector<VolumeGrid> infer_patchwise(Network<float>& net, const VolumeGrid& v, const Dims3& patch_size,
                                        const Dims3& stride, int out_scale, int threads = 1);

struct ReconstructOptions {
  double iso = 0.5;
  int smooth_iterations = 2;
  double smooth_lambda = 0.5;
};

// Zero-border pad, marching cubes at iso, Laplacian smoothing. Empty level set
// gives an empty mesh.
TriMesh reconstruct(const VolumeGrid& occ, const ReconstructOptions& opt = {});

// Explicit baseline: binarize at 0.5, nearest-neighbour upsample to out_dims.
VolumeGrid nearest_upsample_mask(const VolumeGrid& occ, const Dims3& out_dims);

}  // namespace organocc
