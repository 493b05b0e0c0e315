#pragma once

#include "organocc/vec3.hpp"

namespace organocc {

// Maps between world (mm), continuous voxel index, and normalized [-1,1]
// coordinates. Voxel i along an axis with D voxels sits at normalized
// (2i+1)/D - 1, so the normalized cube spans the outer faces of the voxel
// grid and grids of different resolution over the same extent share one
// normalized frame.
struct CoordinateFrame {
  Dims3 dims{1, 1, 1};
  Vec3 spacing{1, 1, 1};
  Vec3 origin{0, 0, 0};  // world position of voxel (0,0,0) center

  Vec3 index_to_world(const Vec3& idx) const { return origin + hadamard(idx, spacing); }

  Vec3 world_to_index(const Vec3& w) const {
    const Vec3 d = w - origin;
    return {d.x / spacing.x, d.y / spacing.y, d.z / spacing.z};
  }

  Vec3 index_to_normalized(const Vec3& idx) const {
    return {(2.0 * idx.x + 1.0) / dims[0] - 1.0, (2.0 * idx.y + 1.0) / dims[1] - 1.0,
            (2.0 * idx.z + 1.0) / dims[2] - 1.0};
  }

  Vec3 normalized_to_index(const Vec3& q) const {
    return {((q.x + 1.0) * dims[0] - 1.0) * 0.5, ((q.y + 1.0) * dims[1] - 1.0) * 0.5,
            ((q.z + 1.0) * dims[2] - 1.0) * 0.5};
  }

  Vec3 world_to_normalized(const Vec3& w) const { return index_to_normalized(world_to_index(w)); }
  Vec3 normalized_to_world(const Vec3& q) const { return index_to_world(normalized_to_index(q)); }

  Vec3 voxel_center_normalized(int i, int j, int k) const {
    return index_to_normalized({static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)});
  }

  // Physical size of the grid box (outer voxel faces).
  Vec3 extent() const { return {dims[0] * spacing.x, dims[1] * spacing.y, dims[2] * spacing.z}; }

  bool same_grid(const CoordinateFrame& o, double tol = 1e-9) const;
};

}  // namespace organocc
