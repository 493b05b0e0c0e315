#pragma once

#include <utility>

#include "organocc/affine.hpp"
#include "organocc/rng.hpp"
#include "organocc/sampling.hpp"
#include "organocc/volume.hpp"

namespace organocc {

// Ranges act on normalized coordinates. Translation is a fraction of the
// normalized extent (2), rotation is in degrees per axis, scale is per axis.
struct AugmentConfig {
  double translation = 0.1;
  Vec3 rotation_deg{15, 15, 15};
  double scale_min = 0.9;
  double scale_max = 1.1;

  void validate() const;
};

struct AffineAugment {
  Affine matrix;  // T * R * S
  Vec3 translation{0, 0, 0};
  Vec3 rotation_deg{0, 0, 0};
  Vec3 scale{1, 1, 1};
};

AffineAugment sample_affine(const AugmentConfig& cfg, Rng& rng);

// Pull-back resampling: output at normalized q = trilinear sample of v at
// A^-1 q; samples whose source lies outside [-1,1]^3 take the fill value
// (the recorded fill, else the minimum of v).
VolumeGrid warp_volume(const VolumeGrid& v, const Affine& a);

std::vector<Vec3> transform_points(const std::vector<Vec3>& points, const Affine& a);

// One draw of A applied to both image and points; points leaving [-1,1]^3
// are dropped, labels of the rest are unchanged.
std::pair<VolumeGrid, QuerySet> apply_paired(const VolumeGrid& v, const QuerySet& q, const AugmentConfig& cfg,
                                             Rng& rng, AffineAugment* drawn = nullptr);

}  // namespace organocc
