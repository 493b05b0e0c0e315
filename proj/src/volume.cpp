#include "organocc/volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "organocc/error.hpp"

namespace organocc {

bool CoordinateFrame::same_grid(const CoordinateFrame& o, double tol) const {
  if (dims != o.dims) return false;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(spacing[a] - o.spacing[a]) > tol) return false;
    if (std::abs(origin[a] - o.origin[a]) > tol) return false;
  }
  return true;
}

VolumeGrid::VolumeGrid(Dims3 d, Vec3 sp, Vec3 org, double init)
    : dims(d), spacing(sp), origin(org) {
  for (int a = 0; a < 3; ++a) {
    require(d[a] > 0, ErrorKind::InvalidArgument, "volume dims must be positive");
    require(sp[a] > 0, ErrorKind::InvalidArgument, "volume spacing must be positive");
  }
  values.assign(static_cast<std::size_t>(volume_of(d)), init);
}

void VolumeGrid::validate() const {
  for (int a = 0; a < 3; ++a) {
    require(dims[a] > 0, ErrorKind::InvalidArgument, "volume dims must be positive");
    require(spacing[a] > 0, ErrorKind::InvalidArgument, "volume spacing must be positive");
  }
  require(values.size() == static_cast<std::size_t>(volume_of(dims)), ErrorKind::InvalidArgument,
          "volume values length does not match dims");
}

std::vector<int> PatchLayout::axis_offsets(int axis) const {
  std::vector<int> out;
  for (int o = 0; o + patch_size[axis] <= padded_dims[axis]; o += stride[axis]) out.push_back(o);
  return out;
}

NormStats compute_stats(const VolumeGrid& v) {
  require(!v.values.empty(), ErrorKind::DegenerateInput, "cannot normalize an empty volume");
  const double n = static_cast<double>(v.values.size());
  double mean = 0;
  for (double x : v.values) mean += x;
  mean /= n;
  double var = 0;
  for (double x : v.values) var += (x - mean) * (x - mean);
  var /= n;
  const double sd = std::sqrt(var);
  require(sd > 0 && std::isfinite(sd), ErrorKind::DegenerateInput,
          "cannot normalize a constant volume");
  return {mean, sd};
}

std::pair<VolumeGrid, NormStats> normalize(const VolumeGrid& v) {
  v.validate();
  const NormStats st = compute_stats(v);
  VolumeGrid out = v;
  for (double& x : out.values) x = (x - st.mean) / st.std;
  if (v.fill) out.fill = (*v.fill - st.mean) / st.std;
  return {std::move(out), st};
}

VolumeGrid pad_to_dims(const VolumeGrid& v, const Dims3& dims, double fill) {
  v.validate();
  for (int a = 0; a < 3; ++a) {
    require(dims[a] >= v.dims[a], ErrorKind::InvalidArgument,
            "pad target smaller than volume along axis " + std::to_string(a));
  }
  VolumeGrid out(dims, v.spacing, v.origin, fill);
  for (int k = 0; k < v.dims[2]; ++k) {
    for (int j = 0; j < v.dims[1]; ++j) {
      const double* src = &v.values[v.index(0, j, k)];
      std::copy(src, src + v.dims[0], &out.values[out.index(0, j, k)]);
    }
  }
  out.fill = fill;
  return out;
}

VolumeGrid pad_to_cube(const VolumeGrid& v, int side, double fill) {
  return pad_to_dims(v, {side, side, side}, fill);
}

namespace {

// Lower cell index and fraction for a continuous index, clamp-to-edge.
inline void cell_of(double x, int n, int& i0, double& t) {
  if (n == 1) {
    i0 = 0;
    t = 0;
    return;
  }
  x = std::clamp(x, 0.0, static_cast<double>(n - 1));
  i0 = std::min(static_cast<int>(std::floor(x)), n - 2);
  t = x - i0;
}

}  // namespace

double sample_trilinear(const VolumeGrid& v, const Vec3& q) {
  const Vec3 idx = v.frame().normalized_to_index(q);
  int i0, j0, k0;
  double tx, ty, tz;
  cell_of(idx.x, v.dims[0], i0, tx);
  cell_of(idx.y, v.dims[1], j0, ty);
  cell_of(idx.z, v.dims[2], k0, tz);
  const int i1 = std::min(i0 + 1, v.dims[0] - 1);
  const int j1 = std::min(j0 + 1, v.dims[1] - 1);
  const int k1 = std::min(k0 + 1, v.dims[2] - 1);
  const double c00 = v.at(i0, j0, k0) * (1 - tx) + v.at(i1, j0, k0) * tx;
  const double c10 = v.at(i0, j1, k0) * (1 - tx) + v.at(i1, j1, k0) * tx;
  const double c01 = v.at(i0, j0, k1) * (1 - tx) + v.at(i1, j0, k1) * tx;
  const double c11 = v.at(i0, j1, k1) * (1 - tx) + v.at(i1, j1, k1) * tx;
  const double c0 = c00 * (1 - ty) + c10 * ty;
  const double c1 = c01 * (1 - ty) + c11 * ty;
  return c0 * (1 - tz) + c1 * tz;
}

VolumeGrid resample(const VolumeGrid& v, const Dims3& new_dims) {
  v.validate();
  for (int a = 0; a < 3; ++a) {
    require(new_dims[a] > 0, ErrorKind::InvalidArgument, "resample dims must be positive");
  }
  Vec3 sp, org;
  for (int a = 0; a < 3; ++a) {
    sp[a] = v.spacing[a] * v.dims[a] / new_dims[a];
    org[a] = v.origin[a] - 0.5 * v.spacing[a] + 0.5 * sp[a];
  }
  VolumeGrid out(new_dims, sp, org);
  out.fill = v.fill;
  const CoordinateFrame f = out.frame();
  for (int k = 0; k < new_dims[2]; ++k) {
    for (int j = 0; j < new_dims[1]; ++j) {
      for (int i = 0; i < new_dims[0]; ++i) {
        out.at(i, j, k) = sample_trilinear(v, f.voxel_center_normalized(i, j, k));
      }
    }
  }
  return out;
}

PatchLayout plan_patches(const Dims3& dims, const Dims3& patch_size, const Dims3& stride) {
  PatchLayout layout;
  layout.patch_size = patch_size;
  layout.stride = stride;
  for (int a = 0; a < 3; ++a) {
    require(dims[a] > 0, ErrorKind::InvalidArgument, "plan_patches: dims must be positive");
    require(patch_size[a] > 0, ErrorKind::InvalidArgument, "plan_patches: patch size must be positive");
    require(stride[a] > 0, ErrorKind::InvalidArgument, "plan_patches: stride must be positive");
    require(stride[a] <= patch_size[a], ErrorKind::InvalidArgument,
            "plan_patches: stride exceeds patch size");
    const int excess = std::max(dims[a] - patch_size[a], 0);
    layout.padded_dims[a] = patch_size[a] + (excess + stride[a] - 1) / stride[a] * stride[a];
  }
  const auto oz = layout.axis_offsets(2);
  const auto oy = layout.axis_offsets(1);
  const auto ox = layout.axis_offsets(0);
  for (int z : oz) {
    for (int y : oy) {
      for (int x : ox) layout.offsets.push_back({x, y, z});
    }
  }
  return layout;
}

VolumeGrid extract_patch(const VolumeGrid& v, const Dims3& offset, const Dims3& size) {
  v.validate();
  for (int a = 0; a < 3; ++a) {
    require(offset[a] >= 0 && size[a] > 0 && offset[a] + size[a] <= v.dims[a],
            ErrorKind::InvalidArgument, "extract_patch: patch outside volume");
  }
  const Vec3 org = v.world_of(offset[0], offset[1], offset[2]);
  VolumeGrid out(size, v.spacing, org);
  out.fill = v.fill;
  for (int k = 0; k < size[2]; ++k) {
    for (int j = 0; j < size[1]; ++j) {
      const double* src = &v.values[v.index(offset[0], offset[1] + j, offset[2] + k)];
      std::copy(src, src + size[0], &out.values[out.index(0, j, k)]);
    }
  }
  return out;
}

bool is_background_patch(const VolumeGrid& p) {
  require(!p.values.empty(), ErrorKind::InvalidArgument, "is_background_patch: empty patch");
  const auto [mn, mx] = std::minmax_element(p.values.begin(), p.values.end());
  return *mn == *mx;
}

std::vector<std::size_t> foreground_voxels(const VolumeGrid& v) {
  std::vector<std::size_t> out;
  out.reserve(v.values.size());
  for (std::size_t i = 0; i < v.values.size(); ++i) {
    if (!v.fill || v.values[i] != *v.fill) out.push_back(i);
  }
  return out;
}

}  // namespace organocc
