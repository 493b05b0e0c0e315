#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "organocc/geometry.hpp"
#include "organocc/volume.hpp"

namespace organocc {

// Exact nearest-neighbour queries over a fixed point set using a uniform hash
// grid (cell = max extent / 32) searched in expanding Chebyshev rings.
class PointIndex {
 public:
  explicit PointIndex(const std::vector<Vec3>& points);
  // Squared distance to the nearest indexed point.
  double nearest_sq(const Vec3& q) const;

 private:
  std::vector<Vec3> points_;
  Vec3 lo_{0, 0, 0};
  double cell_ = 1;
  int n_[3] = {1, 1, 1};
  std::vector<std::uint32_t> start_;  // CSR over cells
  std::vector<std::uint32_t> order_;
};

// d(a, B) for each a in `from`; the brute variant is the O(n^2) oracle.
std::vector<double> nn_distances(const std::vector<Vec3>& from, const std::vector<Vec3>& to, int threads = 1);
std::vector<double> nn_distances_brute(const std::vector<Vec3>& from, const std::vector<Vec3>& to);

// All throw InvalidArgument on an empty set.
double hausdorff(const std::vector<Vec3>& a, const std::vector<Vec3>& b, int threads = 1);
// Max of the two directed nearest-rank 90th percentiles (rank ceil(0.9 n)).
double hd90(const std::vector<Vec3>& a, const std::vector<Vec3>& b, int threads = 1);
double assd(const std::vector<Vec3>& a, const std::vector<Vec3>& b, int threads = 1);
// Mean squared NN distance a->b plus b->a.
double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b, int threads = 1);

// Percent. The prediction is binarized at `threshold` (p >= threshold); the
// ground truth counts nonzero voxels. Two empty masks give 100.
double iou(const VolumeGrid& pred, const VolumeGrid& gt, double threshold = 0.5);

struct OrganMetrics {
  std::string name;
  // +inf when the reconstruction has no surface (distance to an empty set).
  double hd90 = 0, assd = 0, chamfer = 0, iou = 0;
  std::size_t points_pred = 0, points_gt = 0;
  std::size_t voxels_pred = 0, voxels_gt = 0;
  std::size_t missed = 0;  // empty reconstructions (summed by average_reports)
};

struct EvalOptions {
  std::size_t surface_points = 10000;
  CoordinateFrame voxel_frame;
  std::uint64_t seed = 0;
  int threads = 1;
};

// Distances on area-uniform surface samples of both meshes; IoU on the
// voxelization at voxel_frame centers (pred by ray parity, gt by the shape
// sign when given, else by ray parity). Empty pred mesh: DegenerateInput.
OrganMetrics evaluate(const TriMesh& pred, const TriMesh& gt, const EvalOptions& opt,
                      const ImplicitShape* gt_shape = nullptr);

struct MetricsReport {
  std::vector<OrganMetrics> organs;
  std::uint64_t seed = 0;
  std::string fingerprint;
  std::size_t surface_points = 0;
  Dims3 voxel_dims{0, 0, 0};

  std::string to_json() const;
  // Aligned columns: organ, HD, ASSD, IOU, CD (CD divided by 1e3).
  std::string table() const;
  static MetricsReport from_json(const std::string& text);
};

// Mean over organs with the same name across reports.
MetricsReport average_reports(const std::vector<MetricsReport>& reports);

}  // namespace organocc
