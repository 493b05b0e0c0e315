#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "organocc/rng.hpp"
#include "organocc/vec3.hpp"
#include "organocc/volume.hpp"

namespace organocc {

struct Aabb {
  Vec3 lo{0, 0, 0};
  Vec3 hi{0, 0, 0};

  bool contains(const Vec3& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
  }
  Aabb expanded(double margin) const {
    return {lo - Vec3{margin, margin, margin}, hi + Vec3{margin, margin, margin}};
  }
  Vec3 size() const { return hi - lo; }
};

using Triangle = std::array<std::uint32_t, 3>;

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;

  bool empty() const { return triangles.empty(); }

  // Throws InvalidArgument on out-of-range or repeated indices.
  void validate() const;

  Aabb bounds() const;
  double area() const;
  // Signed enclosed volume (divergence theorem); positive for outward winding.
  double signed_volume() const;
  // Every undirected edge is shared by exactly two triangles.
  bool is_closed() const;
  // Area-weighted, unit-length per-vertex normals.
  std::vector<Vec3> vertex_normals() const;
};

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);

// Node of an evaluable signed distance field (negative inside).
class SdfNode {
 public:
  virtual ~SdfNode() = default;
  virtual double sdf(const Vec3& p) const = 0;
  virtual Aabb bounds() const = 0;
};

// Shared, immutable handle to an SDF expression. Primitives live in shapes.hpp.
class ImplicitShape {
 public:
  ImplicitShape() = default;
  explicit ImplicitShape(std::shared_ptr<const SdfNode> node) : node_(std::move(node)) {}

  double sdf(const Vec3& p) const { return node_->sdf(p); }
  Aabb bounds() const { return node_->bounds(); }
  bool valid() const { return static_cast<bool>(node_); }
  const std::shared_ptr<const SdfNode>& node() const { return node_; }

 private:
  std::shared_ptr<const SdfNode> node_;
};

// Standard 256-case marching cubes. Cells whose corner values are < iso are
// outside; triangles wind counter-clockwise seen from outside (normals point
// away from the high-value side). Vertices are shared between cells, created
// in cell scan order (z, y, x), and placed in world coordinates.
TriMesh marching_cubes(const VolumeGrid& field, double iso);

// Laplacian smoothing: v <- v + lambda * (mean(1-ring) - v), Jacobi updates.
TriMesh smooth_mesh(const TriMesh& m, int iterations, double lambda);

struct DisplacementPartition {
  double fraction = 1.0;
  double sigma = 0.0;
};

struct SurfaceSamples {
  std::vector<Vec3> points;      // displaced
  std::vector<Vec3> base;        // on-surface positions before displacement
  std::vector<int> partition;    // partition index per point
};

// Area-uniform surface points, each displaced by isotropic N(0, sigma^2 I)
// with the sigma of its partition. Partition k receives round(fraction*n)
// consecutive points (the last one takes the remainder).
SurfaceSamples sample_surface(const TriMesh& m, std::size_t n,
                              const std::vector<DisplacementPartition>& partitions, Rng& rng);

std::vector<Vec3> sample_surface_points(const TriMesh& m, std::size_t n,
                                        const std::vector<DisplacementPartition>& partitions,
                                        Rng& rng);

// 1 iff sdf(p) < 0 (surface points are outside).
std::vector<std::uint8_t> point_occupancy(const ImplicitShape& shape, const std::vector<Vec3>& points);

// Ray-parity inside test against a closed triangle mesh. Rays run along +x
// through a (y,z) bucket grid; hits too close to an edge, vertex, or the query
// point are re-cast along jittered directions. Throws Topology for open meshes.
class MeshInsideTester {
 public:
  explicit MeshInsideTester(const TriMesh& mesh);
  bool inside(const Vec3& p) const;

 private:
  enum class Hit { Clean, Degenerate };
  Hit count_axis_ray(const Vec3& p, int& crossings) const;
  bool jittered_parity(const Vec3& p) const;

  const TriMesh& mesh_;
  Aabb box_;
  int ny_ = 1, nz_ = 1;
  double cell_y_ = 1, cell_z_ = 1;
  std::vector<std::vector<std::uint32_t>> buckets_;
  double eps_ = 1e-12;
};

std::vector<std::uint8_t> point_occupancy(const TriMesh& mesh, const std::vector<Vec3>& points);

// ASCII OBJ with v/f records, 1-based indices.
void write_obj(const TriMesh& m, const std::string& path, const std::string& header_comment = "");
TriMesh read_obj(const std::string& path);

}  // namespace organocc
