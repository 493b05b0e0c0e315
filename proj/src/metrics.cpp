#include "organocc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "organocc/error.hpp"
#include "organocc/parallel.hpp"
#include "organocc/rng.hpp"
#include "json.hpp"

namespace organocc {

namespace {

double dist_sq(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

void require_nonempty(const std::vector<Vec3>& a, const std::vector<Vec3>& b, const char* what) {
  require(!a.empty() && !b.empty(), ErrorKind::InvalidArgument, std::string(what) + ": empty point set");
}

double directed_percentile(std::vector<double> d, double q) {
  std::sort(d.begin(), d.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(d.size())));
  return d[std::max<std::size_t>(rank, 1) - 1];
}

}  // namespace

PointIndex::PointIndex(const std::vector<Vec3>& points) : points_(points) {
  require(!points.empty(), ErrorKind::InvalidArgument, "PointIndex: empty point set");
  Vec3 hi = points[0];
  lo_ = points[0];
  for (const auto& p : points) {
    lo_ = {std::min(lo_.x, p.x), std::min(lo_.y, p.y), std::min(lo_.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  const double extent = std::max({hi.x - lo_.x, hi.y - lo_.y, hi.z - lo_.z});
  cell_ = extent > 0 ? extent / 32.0 : 1.0;
  const double span[3] = {hi.x - lo_.x, hi.y - lo_.y, hi.z - lo_.z};
  for (int a = 0; a < 3; ++a) n_[a] = std::clamp(static_cast<int>(span[a] / cell_) + 1, 1, 33);

  const std::size_t cells = static_cast<std::size_t>(n_[0]) * n_[1] * n_[2];
  std::vector<std::uint32_t> cell_of(points.size());
  start_.assign(cells + 1, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 d = points[i] - lo_;
    const int cx = std::min(static_cast<int>(d.x / cell_), n_[0] - 1);
    const int cy = std::min(static_cast<int>(d.y / cell_), n_[1] - 1);
    const int cz = std::min(static_cast<int>(d.z / cell_), n_[2] - 1);
    cell_of[i] = static_cast<std::uint32_t>((static_cast<std::size_t>(cz) * n_[1] + cy) * n_[0] + cx);
    ++start_[cell_of[i] + 1];
  }
  for (std::size_t c = 0; c < cells; ++c) start_[c + 1] += start_[c];
  order_.resize(points.size());
  std::vector<std::uint32_t> fill(start_.begin(), start_.end() - 1);
  for (std::size_t i = 0; i < points.size(); ++i) order_[fill[cell_of[i]]++] = static_cast<std::uint32_t>(i);
}

double PointIndex::nearest_sq(const Vec3& q) const {
  const Vec3 d = q - lo_;
  const int c[3] = {static_cast<int>(std::floor(d.x / cell_)), static_cast<int>(std::floor(d.y / cell_)),
                    static_cast<int>(std::floor(d.z / cell_))};
  // Rings closer than the grid box are empty; rings beyond max_r are outside it.
  int min_r = 0, max_r = 0;
  for (int a = 0; a < 3; ++a) {
    min_r = std::max(min_r, std::max(-c[a], c[a] - (n_[a] - 1)));
    max_r = std::max(max_r, std::max(std::abs(c[a]), std::abs(c[a] - (n_[a] - 1))));
  }
  double best = INFINITY;
  auto scan = [&](int x, int y, int z) {
    const std::size_t cell = (static_cast<std::size_t>(z) * n_[1] + y) * n_[0] + x;
    for (std::uint32_t s = start_[cell]; s < start_[cell + 1]; ++s) best = std::min(best, dist_sq(q, points_[order_[s]]));
  };
  for (int r = min_r; r <= max_r; ++r) {
    const int z0 = std::max(c[2] - r, 0), z1 = std::min(c[2] + r, n_[2] - 1);
    const int y0 = std::max(c[1] - r, 0), y1 = std::min(c[1] + r, n_[1] - 1);
    for (int z = z0; z <= z1; ++z)
      for (int y = y0; y <= y1; ++y) {
        if (std::abs(z - c[2]) == r || std::abs(y - c[1]) == r) {
          for (int x = std::max(c[0] - r, 0); x <= std::min(c[0] + r, n_[0] - 1); ++x) scan(x, y, z);
        } else {
          if (c[0] - r >= 0 && c[0] - r < n_[0]) scan(c[0] - r, y, z);
          if (r > 0 && c[0] + r >= 0 && c[0] + r < n_[0]) scan(c[0] + r, y, z);
        }
      }
    // Cells in ring r+1 are at least r cells away from q along some axis.
    const double bound = r * cell_;
    if (best <= bound * bound) break;
  }
  return best;
}

std::vector<double> nn_distances(const std::vector<Vec3>& from, const std::vector<Vec3>& to, int threads) {
  require_nonempty(from, to, "nn_distances");
  const PointIndex index(to);
  std::vector<double> out(from.size());
  parallel_for(from.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = std::sqrt(index.nearest_sq(from[i]));
  });
  return out;
}

std::vector<double> nn_distances_brute(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
  require_nonempty(from, to, "nn_distances_brute");
  std::vector<double> out(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) {
    double best = INFINITY;
    for (const auto& p : to) best = std::min(best, dist_sq(from[i], p));
    out[i] = std::sqrt(best);
  }
  return out;
}

double hausdorff(const std::vector<Vec3>& a, const std::vector<Vec3>& b, int threads) {
  require_nonempty(a, b, "hausdorff");
  const auto ab = nn_distances(a, b, threads), ba = nn_distances(b, a, threads);
  return std::max(*std::max_element(ab.begin(), ab.end()), *std::max_element(ba.begin(), ba.end()));
}

double hd90(const std::vector<Vec3>& a, const std::vector<Vec3>& b, int threads) {
  require_nonempty(a, b, "hd90");
  return std::max(directed_percentile(nn_distances(a, b, threads), 0.9),
                  directed_percentile(nn_distances(b, a, threads), 0.9));
}

double assd(const std::vector<Vec3>& a, const std::vector<Vec3>& b, int threads) {
  require_nonempty(a, b, "assd");
  double s = 0;
  for (double d : nn_distances(a, b, threads)) s += d;
  for (double d : nn_distances(b, a, threads)) s += d;
  return s / static_cast<double>(a.size() + b.size());
}

double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b, int threads) {
  require_nonempty(a, b, "chamfer");
  double sa = 0, sb = 0;
  for (double d : nn_distances(a, b, threads)) sa += d * d;
  for (double d : nn_distances(b, a, threads)) sb += d * d;
  return sa / static_cast<double>(a.size()) + sb / static_cast<double>(b.size());
}

double iou(const VolumeGrid& pred, const VolumeGrid& gt, double threshold) {
  require(pred.frame().same_grid(gt.frame()) && pred.size() == gt.size(), ErrorKind::FrameMismatch,
          "iou: prediction and ground truth grids differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.values[i] >= threshold, g = gt.values[i] != 0.0;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 100.0 : 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
}

OrganMetrics evaluate(const TriMesh& pred, const TriMesh& gt, const EvalOptions& opt, const ImplicitShape* gt_shape) {
  require(!pred.empty(), ErrorKind::DegenerateInput, "evaluate: predicted mesh is empty");
  require(!gt.empty(), ErrorKind::DegenerateInput, "evaluate: ground-truth mesh is empty");
  require(opt.surface_points > 0, ErrorKind::InvalidArgument, "evaluate: surface_points must be positive");
  // One stream per surface, same seed: identical meshes give identical samples.
  Rng rng_pred = make_rng(opt.seed, 1), rng_gt = make_rng(opt.seed, 1);
  const auto a = sample_surface_points(pred, opt.surface_points, {{1.0, 0.0}}, rng_pred);
  const auto b = sample_surface_points(gt, opt.surface_points, {{1.0, 0.0}}, rng_gt);

  OrganMetrics m;
  m.points_pred = a.size();
  m.points_gt = b.size();
  const auto ab = nn_distances(a, b, opt.threads), ba = nn_distances(b, a, opt.threads);
  m.hd90 = std::max(directed_percentile(ab, 0.9), directed_percentile(ba, 0.9));
  double s = 0, sa = 0, sb = 0;
  for (double d : ab) s += d, sa += d * d;
  for (double d : ba) s += d, sb += d * d;
  m.assd = s / static_cast<double>(a.size() + b.size());
  m.chamfer = sa / static_cast<double>(a.size()) + sb / static_cast<double>(b.size());

  const auto& f = opt.voxel_frame;
  std::vector<Vec3> centers;
  centers.reserve(static_cast<std::size_t>(f.dims[0]) * f.dims[1] * f.dims[2]);
  for (int k = 0; k < f.dims[2]; ++k)
    for (int j = 0; j < f.dims[1]; ++j)
      for (int i = 0; i < f.dims[0]; ++i) centers.push_back(f.index_to_world({double(i), double(j), double(k)}));
  VolumeGrid pv = VolumeGrid::from_frame(f), gv = VolumeGrid::from_frame(f);
  const auto po = point_occupancy(pred, centers);
  const auto go = gt_shape ? point_occupancy(*gt_shape, centers) : point_occupancy(gt, centers);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    pv.values[i] = po[i];
    gv.values[i] = go[i];
    m.voxels_pred += po[i];
    m.voxels_gt += go[i];
  }
  m.iou = iou(pv, gv, 0.5);
  return m;
}

namespace {

// JSON has no infinity; missed organs store "inf".
nlohmann::ordered_json distance_json(double d) {
  return std::isinf(d) && d > 0 ? nlohmann::ordered_json("inf") : nlohmann::ordered_json(d);
}

double distance_from(const nlohmann::json& j) { return j.is_string() && j == "inf" ? INFINITY : j.get<double>(); }

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["fingerprint"] = fingerprint;
  j["seed"] = seed;
  j["surface_points"] = surface_points;
  j["voxel_dims"] = {voxel_dims[0], voxel_dims[1], voxel_dims[2]};
  j["conventions"] = {{"hd90", "max of directed nearest-rank 90th percentiles, rank ceil(0.9 n)"},
                      {"chamfer", "mean squared NN distance both ways, mm^2; table shows value / 1e3"},
                      {"iou", "percent, prediction binarized at 0.5"}};
  auto& arr = j["organs"] = nlohmann::ordered_json::array();
  for (const auto& o : organs) {
    arr.push_back({{"name", o.name},
                   {"hd90_mm", distance_json(o.hd90)},
                   {"assd_mm", distance_json(o.assd)},
                   {"chamfer_mm2", distance_json(o.chamfer)},
                   {"iou_percent", o.iou},
                   {"points_pred", o.points_pred},
                   {"points_gt", o.points_gt},
                   {"voxels_pred", o.voxels_pred},
                   {"voxels_gt", o.voxels_gt},
                   {"missed", o.missed}});
  }
  return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  MetricsReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.surface_points = j.at("surface_points").get<std::size_t>();
    for (int a = 0; a < 3; ++a) r.voxel_dims[a] = j.at("voxel_dims").at(a).get<int>();
    for (const auto& o : j.at("organs")) {
      OrganMetrics m;
      m.name = o.at("name").get<std::string>();
      m.hd90 = distance_from(o.at("hd90_mm"));
      m.assd = distance_from(o.at("assd_mm"));
      m.chamfer = distance_from(o.at("chamfer_mm2"));
      m.iou = o.at("iou_percent").get<double>();
      m.points_pred = o.at("points_pred").get<std::size_t>();
      m.points_gt = o.at("points_gt").get<std::size_t>();
      m.voxels_pred = o.at("voxels_pred").get<std::size_t>();
      m.voxels_gt = o.at("voxels_gt").get<std::size_t>();
      m.missed = o.value("missed", std::size_t{0});
      r.organs.push_back(m);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, std::string("metrics report: ") + e.what());
  }
  return r;
}

std::string MetricsReport::table() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %10s %10s %10s %12s\n", "organ", "HD90[mm]", "ASSD[mm]", "IOU[%]",
                "CD[mm2]/1e3");
  os << line;
  for (const auto& o : organs) {
    std::snprintf(line, sizeof line, "%-16s %10.4f %10.4f %10.3f %12.6f\n", o.name.c_str(), o.hd90, o.assd, o.iou,
                  o.chamfer / 1e3);
    os << line;
  }
  return os.str();
}

MetricsReport average_reports(const std::vector<MetricsReport>& reports) {
  require(!reports.empty(), ErrorKind::InvalidArgument, "average_reports: no reports");
  MetricsReport out = reports.front();
  std::map<std::string, std::size_t> count;
  for (auto& o : out.organs) {
    o = OrganMetrics{o.name};
    count[o.name] = 0;
  }
  for (const auto& r : reports)
    for (const auto& o : r.organs)
      for (auto& acc : out.organs)
        if (acc.name == o.name) {
          acc.hd90 += o.hd90;
          acc.assd += o.assd;
          acc.chamfer += o.chamfer;
          acc.iou += o.iou;
          acc.points_pred += o.points_pred;
          acc.points_gt += o.points_gt;
          acc.voxels_pred += o.voxels_pred;
          acc.voxels_gt += o.voxels_gt;
          acc.missed += o.missed;
          ++count[o.name];
        }
  for (auto& acc : out.organs) {
    const double n = static_cast<double>(count[acc.name]);
    acc.hd90 /= n;
    acc.assd /= n;
    acc.chamfer /= n;
    acc.iou /= n;
  }
  return out;
}

}  // namespace organocc
