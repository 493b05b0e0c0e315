#include "organocc/augment.hpp"

#include <algorithm>
#include <cmath>

#include "organocc/error.hpp"

namespace organocc {

void AugmentConfig::validate() const {
  require(translation >= 0 && rotation_deg.x >= 0 && rotation_deg.y >= 0 && rotation_deg.z >= 0,
          ErrorKind::Config, "augmentation ranges must be non-negative");
  require(scale_min > 0 && scale_max >= scale_min, ErrorKind::Config, "scale range must be positive and ordered");
}

AffineAugment sample_affine(const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  AffineAugment a;
  const double t = cfg.translation * 2.0;
  for (int i = 0; i < 3; ++i) a.translation[i] = uniform(rng, -t, t);
  for (int i = 0; i < 3; ++i) a.rotation_deg[i] = uniform(rng, -cfg.rotation_deg[i], cfg.rotation_deg[i]);
  for (int i = 0; i < 3; ++i) a.scale[i] = uniform(rng, cfg.scale_min, cfg.scale_max);
  const Vec3 rad = a.rotation_deg * (M_PI / 180.0);
  a.matrix = Affine::translate(a.translation) * Affine::rotate_xyz(rad) * Affine::scale(a.scale);
  return a;
}

VolumeGrid warp_volume(const VolumeGrid& v, const Affine& a) {
  v.validate();
  const Affine inv = a.inverse();
  const double fill = v.fill ? *v.fill : *std::min_element(v.values.begin(), v.values.end());
  VolumeGrid out = v;
  const CoordinateFrame f = v.frame();
  for (int k = 0; k < v.dims[2]; ++k)
    for (int j = 0; j < v.dims[1]; ++j)
      for (int i = 0; i < v.dims[0]; ++i) {
        const Vec3 src = inv.apply(f.voxel_center_normalized(i, j, k));
        const bool inside = std::abs(src.x) <= 1 && std::abs(src.y) <= 1 && std::abs(src.z) <= 1;
        out.at(i, j, k) = inside ? sample_trilinear(v, src) : fill;
      }
  return out;
}

std::vector<Vec3> transform_points(const std::vector<Vec3>& points, const Affine& a) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(a.apply(p));
  return out;
}

std::pair<VolumeGrid, QuerySet> apply_paired(const VolumeGrid& v, const QuerySet& q, const AugmentConfig& cfg,
                                             Rng& rng, AffineAugment* drawn) {
  const AffineAugment a = sample_affine(cfg, rng);
  if (drawn) *drawn = a;
  VolumeGrid w = warp_volume(v, a.matrix);
  const auto moved = transform_points(q.coords, a.matrix);
  std::vector<std::size_t> keep;
  keep.reserve(moved.size());
  for (std::size_t i = 0; i < moved.size(); ++i) {
    const Vec3& p = moved[i];
    if (std::abs(p.x) <= 1 && std::abs(p.y) <= 1 && std::abs(p.z) <= 1) keep.push_back(i);
  }
  QuerySet out = q.subset(keep);
  for (std::size_t i = 0; i < keep.size(); ++i) out.coords[i] = moved[keep[i]];
  return {std::move(w), std::move(out)};
}

}  // namespace organocc
