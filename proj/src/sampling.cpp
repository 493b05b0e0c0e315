#include "organocc/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "organocc/error.hpp"
#include "organocc/io.hpp"
#include "json.hpp"

namespace organocc {

void QuerySet::validate() const {
  require(organs >= 1, ErrorKind::InvalidArgument, "queryset needs at least one organ");
  require(labels.size() == coords.size() * static_cast<std::size_t>(organs), ErrorKind::InvalidArgument,
          "queryset label count mismatch");
  require(tags.size() == coords.size(), ErrorKind::InvalidArgument, "queryset tag count mismatch");
  for (auto l : labels) require(l <= 1, ErrorKind::InvalidArgument, "queryset labels must be 0 or 1");
}

void QuerySet::append(const QuerySet& other) {
  require(other.organs == organs, ErrorKind::InvalidArgument, "queryset organ count mismatch");
  coords.insert(coords.end(), other.coords.begin(), other.coords.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  tags.insert(tags.end(), other.tags.begin(), other.tags.end());
}

QuerySet QuerySet::subset(const std::vector<std::size_t>& idx) const {
  QuerySet out;
  out.organs = organs;
  out.coords.reserve(idx.size());
  out.labels.reserve(idx.size() * organs);
  out.tags.reserve(idx.size());
  for (auto i : idx) {
    out.coords.push_back(coords[i]);
    for (int c = 0; c < organs; ++c) out.labels.push_back(label(i, c));
    out.tags.push_back(tags[i]);
  }
  return out;
}

std::vector<Vec3> sample_volume_points(const VolumeGrid& v, std::size_t n, Rng& rng) {
  v.validate();
  const auto fg = foreground_voxels(v);
  require(!fg.empty(), ErrorKind::DegenerateInput, "volume has no non-background voxel");
  const CoordinateFrame f = v.frame();
  const std::size_t plane = static_cast<std::size_t>(v.dims[0]) * v.dims[1];
  std::vector<Vec3> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t idx = fg[uniform_index(rng, fg.size())];
    const int k = static_cast<int>(idx / plane);
    const int j = static_cast<int>((idx % plane) / v.dims[0]);
    const int i = static_cast<int>(idx % v.dims[0]);
    out.push_back(f.voxel_center_normalized(i, j, k));
  }
  return out;
}

namespace {

Vec3 clamp_unit(const Vec3& q) {
  return {std::clamp(q.x, -1.0, 1.0), std::clamp(q.y, -1.0, 1.0), std::clamp(q.z, -1.0, 1.0)};
}

void label_points(QuerySet& q, std::size_t first, const std::vector<ImplicitShape>& shapes,
                  const std::vector<TriMesh>& meshes, const CoordinateFrame& frame) {
  std::vector<Vec3> world;
  world.reserve(q.coords.size() - first);
  for (std::size_t i = first; i < q.coords.size(); ++i) world.push_back(frame.normalized_to_world(q.coords[i]));
  for (int c = 0; c < q.organs; ++c) {
    const auto occ = shapes.empty() ? point_occupancy(meshes[c], world) : point_occupancy(shapes[c], world);
    for (std::size_t i = 0; i < occ.size(); ++i) q.labels[(first + i) * q.organs + c] = occ[i];
  }
}

}  // namespace

QuerySet build_queryset(const std::vector<ImplicitShape>& shapes, const std::vector<TriMesh>& meshes,
                        const VolumeGrid& v, const QueryBudget& budget, Rng& rng) {
  const std::size_t organs = shapes.empty() ? meshes.size() : shapes.size();
  require(organs >= 1, ErrorKind::InvalidArgument, "build_queryset needs at least one organ");
  require(meshes.size() == organs, ErrorKind::InvalidArgument, "one mesh per organ is required");
  require(budget.boundary.size() == organs, ErrorKind::InvalidArgument, "one boundary budget per organ");
  require(budget.volume > 0, ErrorKind::InvalidArgument, "volume budget must be positive");
  for (auto b : budget.boundary) require(b > 0, ErrorKind::InvalidArgument, "boundary budgets must be positive");

  const CoordinateFrame frame = v.frame();
  QuerySet q;
  q.organs = static_cast<int>(organs);
  q.coords = sample_volume_points(v, budget.volume, rng);
  q.tags.assign(q.coords.size(), PointSource::Volume);

  for (std::size_t c = 0; c < organs; ++c) {
    TriMesh m = meshes[c];
    for (auto& p : m.vertices) p = frame.world_to_normalized(p);
    for (const auto& p : sample_surface_points(m, budget.boundary[c], budget.displacement, rng)) {
      q.coords.push_back(clamp_unit(p));
      q.tags.push_back(PointSource::Boundary);
    }
  }
  q.labels.assign(q.coords.size() * organs, 0);
  label_points(q, 0, shapes, meshes, frame);
  return q;
}

Vec3 parent_to_patch(const Vec3& q, const Dims3& offset, const Dims3& size, const Dims3& parent_dims) {
  Vec3 out;
  for (int a = 0; a < 3; ++a) {
    const double x = ((q[a] + 1.0) * parent_dims[a] - 1.0) * 0.5 - offset[a];
    out[a] = (2.0 * x + 1.0) / size[a] - 1.0;
  }
  return out;
}

Vec3 patch_to_parent(const Vec3& q, const Dims3& offset, const Dims3& size, const Dims3& parent_dims) {
  Vec3 out;
  for (int a = 0; a < 3; ++a) {
    const double x = ((q[a] + 1.0) * size[a] - 1.0) * 0.5 + offset[a];
    out[a] = (2.0 * x + 1.0) / parent_dims[a] - 1.0;
  }
  return out;
}

QuerySet to_patch_frame(const QuerySet& q, const Dims3& offset, const Dims3& size, const CoordinateFrame& parent) {
  for (int a = 0; a < 3; ++a) {
    require(offset[a] >= 0 && size[a] > 0 && offset[a] + size[a] <= parent.dims[a], ErrorKind::InvalidArgument,
            "patch outside parent bounds");
  }
  QuerySet out;
  out.organs = q.organs;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const Vec3 p = parent_to_patch(q.coords[i], offset, size, parent.dims);
    if (p.x < -1.0 || p.x >= 1.0 || p.y < -1.0 || p.y >= 1.0 || p.z < -1.0 || p.z >= 1.0) continue;
    out.coords.push_back(p);
    for (int c = 0; c < q.organs; ++c) out.labels.push_back(q.label(i, c));
    out.tags.push_back(q.tags[i]);
  }
  return out;
}

VolumeGrid voxelize(const ImplicitShape& shape, const CoordinateFrame& frame) {
  VolumeGrid v = VolumeGrid::from_frame(frame);
  for (int k = 0; k < frame.dims[2]; ++k)
    for (int j = 0; j < frame.dims[1]; ++j)
      for (int i = 0; i < frame.dims[0]; ++i) v.at(i, j, k) = shape.sdf(v.world_of(i, j, k)) < 0 ? 1.0 : 0.0;
  return v;
}

std::vector<std::uint8_t> mask_labels(const VolumeGrid& mask, const std::vector<Vec3>& points) {
  const CoordinateFrame f = mask.frame();
  std::vector<std::uint8_t> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const Vec3 idx = f.normalized_to_index(p);
    int ijk[3];
    for (int a = 0; a < 3; ++a) ijk[a] = std::clamp(static_cast<int>(std::lround(idx[a])), 0, f.dims[a] - 1);
    out.push_back(mask.at(ijk[0], ijk[1], ijk[2]) > 0.5 ? 1 : 0);
  }
  return out;
}

LabelRegimes points_with_occupancy_from_highres(const ImplicitShape& shape, const VolumeGrid& lowres_mask,
                                                const std::vector<Vec3>& points) {
  const CoordinateFrame f = lowres_mask.frame();
  std::vector<Vec3> world;
  world.reserve(points.size());
  for (const auto& p : points) world.push_back(f.normalized_to_world(p));
  return {point_occupancy(shape, world), mask_labels(lowres_mask, points)};
}

void write_queryset(const QuerySet& q, const std::string& path, const std::string& meta_json) {
  q.validate();
  const std::string payload = std::filesystem::path(path).filename().string() + ".bin";
  nlohmann::ordered_json h;
  h["n"] = q.size();
  h["c"] = q.organs;
  h["fields"] = {"coords:f32x3", "labels:u8xc", "tags:u8"};
  h["payload"] = payload;
  h["meta"] = nlohmann::ordered_json::parse(meta_json);
  write_text(path, h.dump(2) + "\n");

  std::vector<std::uint8_t> bytes(q.size() * 3 * sizeof(float) + q.labels.size() + q.tags.size());
  std::size_t o = 0;
  for (const auto& p : q.coords) {
    const float xyz[3] = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)};
    std::memcpy(bytes.data() + o, xyz, sizeof xyz);
    o += sizeof xyz;
  }
  std::copy(q.labels.begin(), q.labels.end(), bytes.begin() + o);
  o += q.labels.size();
  for (auto t : q.tags) bytes[o++] = static_cast<std::uint8_t>(t);
  write_bytes((std::filesystem::path(path).parent_path() / payload).string(), bytes);
}

QuerySet read_queryset(const std::string& path) {
  try {
    const auto h = nlohmann::json::parse(read_text(path));
    QuerySet q;
    const auto n = h.at("n").get<std::size_t>();
    q.organs = h.at("c").get<int>();
    const auto bytes =
        read_bytes((std::filesystem::path(path).parent_path() / h.at("payload").get<std::string>()).string());
    const std::size_t nl = n * static_cast<std::size_t>(q.organs);
    require(bytes.size() == n * 3 * sizeof(float) + nl + n, ErrorKind::Io, "queryset payload size mismatch");
    std::size_t o = 0;
    q.coords.resize(n);
    for (auto& p : q.coords) {
      float xyz[3];
      std::memcpy(xyz, bytes.data() + o, sizeof xyz);
      o += sizeof xyz;
      p = {xyz[0], xyz[1], xyz[2]};
    }
    q.labels.assign(bytes.begin() + o, bytes.begin() + o + nl);
    o += nl;
    q.tags.resize(n);
    for (auto& t : q.tags) t = static_cast<PointSource>(bytes[o++]);
    q.validate();
    return q;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, "bad queryset header " + path + ": " + e.what());
  }
}

}  // namespace organocc
