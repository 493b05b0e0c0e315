#include "organocc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "organocc/error.hpp"
#include "mc_tables.hpp"

namespace organocc {

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * norm(cross(b - a, c - a));
}

void TriMesh::validate() const {
  const auto nv = vertices.size();
  for (const auto& t : triangles) {
    require(t[0] < nv && t[1] < nv && t[2] < nv, ErrorKind::InvalidArgument,
            "triangle index out of range");
    require(t[0] != t[1] && t[1] != t[2] && t[0] != t[2], ErrorKind::InvalidArgument,
            "degenerate triangle (repeated index)");
  }
}

Aabb TriMesh::bounds() const {
  if (vertices.empty()) return {};
  Aabb b{vertices[0], vertices[0]};
  for (const auto& v : vertices) {
    for (int a = 0; a < 3; ++a) {
      b.lo[a] = std::min(b.lo[a], v[a]);
      b.hi[a] = std::max(b.hi[a], v[a]);
    }
  }
  return b;
}

double TriMesh::area() const {
  double s = 0;
  for (const auto& t : triangles) s += triangle_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
  return s;
}

double TriMesh::signed_volume() const {
  double s = 0;
  for (const auto& t : triangles) s += dot(vertices[t[0]], cross(vertices[t[1]], vertices[t[2]]));
  return s / 6.0;
}

bool TriMesh::is_closed() const {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> count;
  for (const auto& t : triangles) {
    for (int e = 0; e < 3; ++e) {
      auto a = t[e], b = t[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      ++count[{a, b}];
    }
  }
  if (count.empty()) return false;
  return std::all_of(count.begin(), count.end(), [](const auto& kv) { return kv.second == 2; });
}

std::vector<Vec3> TriMesh::vertex_normals() const {
  std::vector<Vec3> n(vertices.size());
  for (const auto& t : triangles) {
    const Vec3 fn = cross(vertices[t[1]] - vertices[t[0]], vertices[t[2]] - vertices[t[0]]);
    for (auto i : t) n[i] += fn;
  }
  for (auto& v : n) v = normalized(v);
  return n;
}

// ---------------------------------------------------------------------------
// Marching cubes

namespace {

struct EdgeDef {
  int dx, dy, dz;  // base corner offset
  int axis;
};

constexpr EdgeDef kEdges[12] = {
    {0, 0, 0, 0}, {1, 0, 0, 1}, {0, 1, 0, 0}, {0, 0, 0, 1}, {0, 0, 1, 0}, {1, 0, 1, 1},
    {0, 1, 1, 0}, {0, 0, 1, 1}, {0, 0, 0, 2}, {1, 0, 0, 2}, {1, 1, 0, 2}, {0, 1, 0, 2},
};

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};

}  // namespace

TriMesh marching_cubes(const VolumeGrid& field, double iso) {
  field.validate();
  TriMesh mesh;
  const int nx = field.dims[0], ny = field.dims[1], nz = field.dims[2];
  if (nx < 2 || ny < 2 || nz < 2) return mesh;

  std::unordered_map<std::int64_t, std::uint32_t> edge_vertex;
  auto vertex_on_edge = [&](int i, int j, int k, int axis) -> std::uint32_t {
    const std::int64_t key = ((static_cast<std::int64_t>(k) * ny + j) * nx + i) * 3 + axis;
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const int i1 = i + (axis == 0), j1 = j + (axis == 1), k1 = k + (axis == 2);
    const double va = field.at(i, j, k), vb = field.at(i1, j1, k1);
    const double t = (va == vb) ? 0.5 : (iso - va) / (vb - va);
    const Vec3 pa = field.world_of(i, j, k), pb = field.world_of(i1, j1, k1);
    const auto id = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back(pa + (pb - pa) * t);
    edge_vertex.emplace(key, id);
    return id;
  };

  for (int k = 0; k + 1 < nz; ++k) {
    for (int j = 0; j + 1 < ny; ++j) {
      for (int i = 0; i + 1 < nx; ++i) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          if (field.at(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]) < iso) cube |= 1 << c;
        }
        if (detail::kMcEdgeTable[cube] == 0) continue;
        const int* tri = detail::kMcTriTable[cube];
        for (int t = 0; tri[t] != -1; t += 3) {
          std::uint32_t ids[3];
          for (int e = 0; e < 3; ++e) {
            const EdgeDef& ed = kEdges[tri[t + e]];
            ids[e] = vertex_on_edge(i + ed.dx, j + ed.dy, k + ed.dz, ed.axis);
          }
          // Table winding already points normals from high values to low values.
          mesh.triangles.push_back({ids[0], ids[1], ids[2]});
        }
      }
    }
  }
  return mesh;
}

// ---------------------------------------------------------------------------

TriMesh smooth_mesh(const TriMesh& m, int iterations, double lambda) {
  require(iterations >= 0, ErrorKind::InvalidArgument, "smooth_mesh: negative iterations");
  TriMesh out = m;
  if (iterations == 0 || m.vertices.empty()) return out;

  std::vector<std::vector<std::uint32_t>> ring(m.vertices.size());
  for (const auto& t : m.triangles) {
    for (int e = 0; e < 3; ++e) {
      ring[t[e]].push_back(t[(e + 1) % 3]);
      ring[t[e]].push_back(t[(e + 2) % 3]);
    }
  }
  for (auto& r : ring) {
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
  }

  std::vector<Vec3> next(out.vertices.size());
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t v = 0; v < out.vertices.size(); ++v) {
      if (ring[v].empty()) {
        next[v] = out.vertices[v];
        continue;
      }
      Vec3 c{0, 0, 0};
      for (auto n : ring[v]) c += out.vertices[n];
      c = c / static_cast<double>(ring[v].size());
      next[v] = out.vertices[v] + (c - out.vertices[v]) * lambda;
    }
    out.vertices.swap(next);
  }
  return out;
}

// ---------------------------------------------------------------------------

SurfaceSamples sample_surface(const TriMesh& m, std::size_t n,
                              const std::vector<DisplacementPartition>& partitions, Rng& rng) {
  require(!m.triangles.empty(), ErrorKind::InvalidArgument, "sample_surface: empty mesh");
  require(!partitions.empty(), ErrorKind::InvalidArgument, "sample_surface: no partitions");
  double total_fraction = 0;
  for (const auto& p : partitions) {
    require(p.fraction >= 0 && p.sigma >= 0, ErrorKind::InvalidArgument,
            "sample_surface: negative fraction or sigma");
    total_fraction += p.fraction;
  }
  require(std::abs(total_fraction - 1.0) < 1e-9, ErrorKind::InvalidArgument,
          "sample_surface: partition fractions must sum to 1");

  std::vector<double> cdf(m.triangles.size());
  double acc = 0;
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const auto& tri = m.triangles[t];
    acc += triangle_area(m.vertices[tri[0]], m.vertices[tri[1]], m.vertices[tri[2]]);
    cdf[t] = acc;
  }
  require(acc > 0, ErrorKind::InvalidArgument, "sample_surface: mesh has zero area");

  std::vector<std::size_t> counts(partitions.size());
  std::size_t assigned = 0;
  for (std::size_t k = 0; k + 1 < partitions.size(); ++k) {
    counts[k] = static_cast<std::size_t>(std::llround(partitions[k].fraction * static_cast<double>(n)));
    counts[k] = std::min(counts[k], n - assigned);
    assigned += counts[k];
  }
  counts.back() = n - assigned;

  SurfaceSamples out;
  out.points.reserve(n);
  out.base.reserve(n);
  out.partition.reserve(n);
  for (std::size_t k = 0; k < partitions.size(); ++k) {
    const double sigma = partitions[k].sigma;
    for (std::size_t s = 0; s < counts[k]; ++s) {
      const double r = uniform01(rng) * acc;
      auto it = std::upper_bound(cdf.begin(), cdf.end(), r);
      if (it == cdf.end()) --it;
      const auto& tri = m.triangles[static_cast<std::size_t>(it - cdf.begin())];
      const double su = std::sqrt(uniform01(rng));
      const double v = uniform01(rng);
      const Vec3& a = m.vertices[tri[0]];
      const Vec3& b = m.vertices[tri[1]];
      const Vec3& c = m.vertices[tri[2]];
      const Vec3 p = a * (1 - su) + b * (su * (1 - v)) + c * (su * v);
      Vec3 d{0, 0, 0};
      if (sigma > 0) d = Vec3{standard_normal(rng), standard_normal(rng), standard_normal(rng)} * sigma;
      out.base.push_back(p);
      out.points.push_back(p + d);
      out.partition.push_back(static_cast<int>(k));
    }
  }
  return out;
}

std::vector<Vec3> sample_surface_points(const TriMesh& m, std::size_t n,
                                        const std::vector<DisplacementPartition>& partitions,
                                        Rng& rng) {
  return sample_surface(m, n, partitions, rng).points;
}

std::vector<std::uint8_t> point_occupancy(const ImplicitShape& shape, const std::vector<Vec3>& points) {
  require(shape.valid(), ErrorKind::InvalidArgument, "point_occupancy: empty shape");
  std::vector<std::uint8_t> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = shape.sdf(points[i]) < 0.0 ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Ray parity

MeshInsideTester::MeshInsideTester(const TriMesh& mesh) : mesh_(mesh) {
  mesh.validate();
  require(mesh.is_closed(), ErrorKind::Topology,
          "point_occupancy: mesh is not closed (every edge must be shared by two triangles)");
  box_ = mesh.bounds();
  const Vec3 size = box_.size();
  const double scale = std::max({size.x, size.y, size.z, 1e-300});
  eps_ = 1e-10 * scale;
  const int target = static_cast<int>(std::clamp(std::sqrt(static_cast<double>(mesh.triangles.size())), 1.0, 256.0));
  ny_ = nz_ = target;
  cell_y_ = std::max(size.y, 1e-300) / ny_;
  cell_z_ = std::max(size.z, 1e-300) / nz_;
  buckets_.assign(static_cast<std::size_t>(ny_) * nz_, {});
  for (std::uint32_t t = 0; t < mesh.triangles.size(); ++t) {
    double ylo = 1e300, yhi = -1e300, zlo = 1e300, zhi = -1e300;
    for (auto vi : mesh.triangles[t]) {
      ylo = std::min(ylo, mesh.vertices[vi].y);
      yhi = std::max(yhi, mesh.vertices[vi].y);
      zlo = std::min(zlo, mesh.vertices[vi].z);
      zhi = std::max(zhi, mesh.vertices[vi].z);
    }
    const int j0 = std::clamp(static_cast<int>(std::floor((ylo - eps_ - box_.lo.y) / cell_y_)), 0, ny_ - 1);
    const int j1 = std::clamp(static_cast<int>(std::floor((yhi + eps_ - box_.lo.y) / cell_y_)), 0, ny_ - 1);
    const int k0 = std::clamp(static_cast<int>(std::floor((zlo - eps_ - box_.lo.z) / cell_z_)), 0, nz_ - 1);
    const int k1 = std::clamp(static_cast<int>(std::floor((zhi + eps_ - box_.lo.z) / cell_z_)), 0, nz_ - 1);
    for (int k = k0; k <= k1; ++k) {
      for (int j = j0; j <= j1; ++j) buckets_[static_cast<std::size_t>(k) * ny_ + j].push_back(t);
    }
  }
}

MeshInsideTester::Hit MeshInsideTester::count_axis_ray(const Vec3& p, int& crossings) const {
  crossings = 0;
  const int j = std::clamp(static_cast<int>(std::floor((p.y - box_.lo.y) / cell_y_)), 0, ny_ - 1);
  const int k = std::clamp(static_cast<int>(std::floor((p.z - box_.lo.z) / cell_z_)), 0, nz_ - 1);
  const double bary_eps = 1e-9;
  for (auto t : buckets_[static_cast<std::size_t>(k) * ny_ + j]) {
    const auto& tri = mesh_.triangles[t];
    const Vec3& a = mesh_.vertices[tri[0]];
    const Vec3& b = mesh_.vertices[tri[1]];
    const Vec3& c = mesh_.vertices[tri[2]];
    // 2D barycentrics of (p.y, p.z) in the projected triangle.
    const double det = (b.y - a.y) * (c.z - a.z) - (c.y - a.y) * (b.z - a.z);
    const double w1n = (p.y - a.y) * (c.z - a.z) - (c.y - a.y) * (p.z - a.z);
    const double w2n = (b.y - a.y) * (p.z - a.z) - (p.y - a.y) * (b.z - a.z);
    const double scale = std::abs(det);
    if (scale <= 1e-300) {
      // Triangle seen edge-on; the ray either misses it or grazes it.
      const double ylo = std::min({a.y, b.y, c.y}), yhi = std::max({a.y, b.y, c.y});
      const double zlo = std::min({a.z, b.z, c.z}), zhi = std::max({a.z, b.z, c.z});
      if (p.y >= ylo - eps_ && p.y <= yhi + eps_ && p.z >= zlo - eps_ && p.z <= zhi + eps_ &&
          std::max({a.x, b.x, c.x}) >= p.x - eps_) {
        return Hit::Degenerate;
      }
      continue;
    }
    double w1 = w1n / det, w2 = w2n / det;
    double w0 = 1.0 - w1 - w2;
    const double lo = std::min({w0, w1, w2});
    if (lo < -bary_eps) continue;
    if (lo <= bary_eps) {
      const double x = w0 * a.x + w1 * b.x + w2 * c.x;
      if (x >= p.x - eps_) return Hit::Degenerate;
      continue;
    }
    const double x = w0 * a.x + w1 * b.x + w2 * c.x;
    if (std::abs(x - p.x) <= eps_) return Hit::Degenerate;
    if (x > p.x) ++crossings;
  }
  return Hit::Clean;
}

bool MeshInsideTester::jittered_parity(const Vec3& p) const {
  Rng rng(derive_seed(0x5eedULL, std::hash<double>{}(p.x) ^ (std::hash<double>{}(p.y) << 1) ^
                                     (std::hash<double>{}(p.z) << 2)));
  for (int attempt = 0; attempt < 32; ++attempt) {
    const Vec3 dir = normalized(Vec3{1.0, uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3)} +
                                Vec3{standard_normal(rng), standard_normal(rng), standard_normal(rng)} * 0.5);
    int crossings = 0;
    bool degenerate = false;
    for (const auto& tri : mesh_.triangles) {
      // Moller-Trumbore.
      const Vec3& a = mesh_.vertices[tri[0]];
      const Vec3 e1 = mesh_.vertices[tri[1]] - a;
      const Vec3 e2 = mesh_.vertices[tri[2]] - a;
      const Vec3 h = cross(dir, e2);
      const double det = dot(e1, h);
      const double scale = norm(e1) * norm(e2);
      if (std::abs(det) <= 1e-12 * scale) continue;
      const double inv = 1.0 / det;
      const Vec3 s = p - a;
      const double u = dot(s, h) * inv;
      const Vec3 q = cross(s, e1);
      const double v = dot(dir, q) * inv;
      const double t = dot(e2, q) * inv;
      if (u < -1e-9 || v < -1e-9 || u + v > 1 + 1e-9) continue;
      if (t < -eps_) continue;
      if (u <= 1e-9 || v <= 1e-9 || u + v >= 1 - 1e-9 || std::abs(t) <= eps_) {
        degenerate = true;
        break;
      }
      ++crossings;
    }
    if (!degenerate) return (crossings % 2) == 1;
  }
  fail(ErrorKind::Numeric, "point_occupancy: ray parity stayed degenerate after 32 jittered casts");
}

bool MeshInsideTester::inside(const Vec3& p) const {
  if (!box_.expanded(eps_).contains(p)) return false;
  int crossings = 0;
  if (count_axis_ray(p, crossings) == Hit::Clean) return (crossings % 2) == 1;
  return jittered_parity(p);
}

std::vector<std::uint8_t> point_occupancy(const TriMesh& mesh, const std::vector<Vec3>& points) {
  const MeshInsideTester tester(mesh);
  std::vector<std::uint8_t> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = tester.inside(points[i]) ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// OBJ

void write_obj(const TriMesh& m, const std::string& path, const std::string& header_comment) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::Io, "cannot open for writing: " + path);
  if (!header_comment.empty()) {
    std::istringstream lines(header_comment);
    std::string line;
    while (std::getline(lines, line)) os << "# " << line << '\n';
  }
  char buf[128];
  for (const auto& v : m.vertices) {
    std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", v.x, v.y, v.z);
    os << buf;
  }
  for (const auto& t : m.triangles) os << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  require(static_cast<bool>(os), ErrorKind::Io, "write failed: " + path);
}

TriMesh read_obj(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::Io, "cannot open for reading: " + path);
  TriMesh m;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      ls >> v.x >> v.y >> v.z;
      require(!ls.fail(), ErrorKind::Io, "malformed vertex record in " + path);
      m.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<long long> idx;
      std::string tok;
      while (ls >> tok) idx.push_back(std::stoll(tok.substr(0, tok.find('/'))));
      require(idx.size() >= 3, ErrorKind::Io, "face with fewer than 3 vertices in " + path);
      for (auto& i : idx) {
        require(i >= 1, ErrorKind::Io, "OBJ indices must be positive (1-based) in " + path);
        --i;
      }
      // Fan triangulation for polygons.
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
        m.triangles.push_back({static_cast<std::uint32_t>(idx[0]), static_cast<std::uint32_t>(idx[k]),
                               static_cast<std::uint32_t>(idx[k + 1])});
      }
    }
  }
  m.validate();
  return m;
}

}  // namespace organocc
