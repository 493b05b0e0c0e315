#pragma once

#include <optional>
#include <vector>

#include "organocc/frame.hpp"
#include "organocc/vec3.hpp"

namespace organocc {

// Scalar voxel grid, x fastest-varying then y then z.
struct VolumeGrid {
  Dims3 dims{0, 0, 0};
  Vec3 spacing{1, 1, 1};
  Vec3 origin{0, 0, 0};
  std::vector<double> values;
  // Padding/background marker. Voxels equal to it count as background.
  std::optional<double> fill;

  VolumeGrid() = default;
  VolumeGrid(Dims3 d, Vec3 sp, Vec3 org, double init = 0.0);

  static VolumeGrid from_frame(const CoordinateFrame& f, double init = 0.0) {
    return VolumeGrid(f.dims, f.spacing, f.origin, init);
  }

  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
  }
  double at(int i, int j, int k) const { return values[index(i, j, k)]; }
  double& at(int i, int j, int k) { return values[index(i, j, k)]; }

  CoordinateFrame frame() const { return {dims, spacing, origin}; }
  Vec3 world_of(int i, int j, int k) const {
    return frame().index_to_world({double(i), double(j), double(k)});
  }

  // Throws InvalidArgument when dims/spacing/values are inconsistent.
  void validate() const;
};

struct NormStats {
  double mean = 0;
  double std = 1;
};

struct PatchLayout {
  Dims3 patch_size{0, 0, 0};
  Dims3 stride{0, 0, 0};
  Dims3 padded_dims{0, 0, 0};
  std::vector<Dims3> offsets;  // z-major lexicographic

  // Patch origins along one axis.
  std::vector<int> axis_offsets(int axis) const;
};

// Population mean/std. Throws DegenerateInput for empty or constant volumes.
NormStats compute_stats(const VolumeGrid& v);

// Zero mean, unit (population) std. The fill marker is mapped with the same
// affine transform.
std::pair<VolumeGrid, NormStats> normalize(const VolumeGrid& v);

// Pads to side^3 with the original at the lowest corner; world coordinates of
// original voxels are unchanged. Records `fill` as the background marker.
VolumeGrid pad_to_cube(const VolumeGrid& v, int side, double fill);

// Same as pad_to_cube with per-axis target dims.
VolumeGrid pad_to_dims(const VolumeGrid& v, const Dims3& dims, double fill);

// Trilinear value at a normalized coordinate, clamped to the border.
double sample_trilinear(const VolumeGrid& v, const Vec3& normalized);

// Trilinear resampling over the same physical extent.
VolumeGrid resample(const VolumeGrid& v, const Dims3& new_dims);

PatchLayout plan_patches(const Dims3& dims, const Dims3& patch_size, const Dims3& stride);

// Copy of a sub-box; origin is set so world coordinates are preserved.
VolumeGrid extract_patch(const VolumeGrid& v, const Dims3& offset, const Dims3& size);

// max == min over the patch.
bool is_background_patch(const VolumeGrid& p);

// Voxels not equal to the recorded fill (all voxels when no fill is set).
std::vector<std::size_t> foreground_voxels(const VolumeGrid& v);

}  // namespace organocc
