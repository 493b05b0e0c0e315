#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "organocc/geometry.hpp"
#include "organocc/rng.hpp"
#include "organocc/volume.hpp"

namespace organocc {

enum class PointSource : std::uint8_t { Volume = 0, Boundary = 1 };

// Query points in normalized [-1,1]^3 coordinates with per-organ labels.
struct QuerySet {
  int organs = 1;
  std::vector<Vec3> coords;
  std::vector<std::uint8_t> labels;  // point-major, coords.size() * organs
  std::vector<PointSource> tags;

  std::size_t size() const { return coords.size(); }
  std::uint8_t label(std::size_t point, int organ) const { return labels[point * organs + organ]; }

  // Throws InvalidArgument on inconsistent sizes or labels outside {0,1}.
  void validate() const;
  void append(const QuerySet& other);
  QuerySet subset(const std::vector<std::size_t>& idx) const;
};

struct QueryBudget {
  std::size_t volume = 200000;
  std::vector<std::size_t> boundary{100000};  // one count per organ
  std::vector<DisplacementPartition> displacement{{0.5, 0.1}, {0.5, 0.01}};
};

// Centers of uniformly drawn foreground voxels, normalized coordinates.
std::vector<Vec3> sample_volume_points(const VolumeGrid& v, std::size_t n, Rng& rng);

// Volume points followed by each organ's boundary points. Labels come from
// `shapes` when given, otherwise from ray parity against `meshes`. Shapes and
// meshes live in the world frame of `v`; displacement sigmas are in
// normalized units. Boundary points are clamped into [-1,1]^3 before labeling.
QuerySet build_queryset(const std::vector<ImplicitShape>& shapes, const std::vector<TriMesh>& meshes,
                        const VolumeGrid& v, const QueryBudget& budget, Rng& rng);

// Normalized coordinates of the parent frame <-> the patch's own frame.
Vec3 parent_to_patch(const Vec3& q, const Dims3& offset, const Dims3& size, const Dims3& parent_dims);
Vec3 patch_to_parent(const Vec3& q, const Dims3& offset, const Dims3& size, const Dims3& parent_dims);

// Keeps points whose parent voxel position lies in the half-open patch box
// and re-expresses them in the patch frame.
QuerySet to_patch_frame(const QuerySet& q, const Dims3& offset, const Dims3& size, const CoordinateFrame& parent);

// Occupancy of `shape` sampled at the voxel centers of `frame`.
VolumeGrid voxelize(const ImplicitShape& shape, const CoordinateFrame& frame);

struct LabelRegimes {
  std::vector<std::uint8_t> exact;  // analytic / high-resolution source
  std::vector<std::uint8_t> mask;   // nearest voxel of a low-resolution mask
};

// `points` are normalized coordinates of the mask frame.
LabelRegimes points_with_occupancy_from_highres(const ImplicitShape& shape, const VolumeGrid& lowres_mask,
                                                const std::vector<Vec3>& points);

// Nearest-voxel lookup in a binary mask at normalized coordinates.
std::vector<std::uint8_t> mask_labels(const VolumeGrid& mask, const std::vector<Vec3>& points);

// JSON header at `path` plus raw payload at `path + ".bin"`.
void write_queryset(const QuerySet& q, const std::string& path, const std::string& meta_json = "{}");
QuerySet read_queryset(const std::string& path);

}  // namespace organocc
