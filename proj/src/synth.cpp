#include "organocc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "organocc/affine.hpp"
#include "organocc/error.hpp"
#include "organocc/io.hpp"
#include "organocc/parallel.hpp"
#include "organocc/shapes.hpp"
#include "json.hpp"

namespace organocc {

namespace {

using nlohmann::ordered_json;

ordered_json vec_json(const Vec3& v) { return ordered_json::array({v.x, v.y, v.z}); }
Vec3 vec_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

constexpr double kTwoPi = 6.283185307179586;

ImplicitShape primitive_shape(const Primitive& p) {
  const double s = kSceneHalfExtent;
  if (p.kind == PrimitiveKind::Capsule) return shapes::capsule(p.a * s, p.b * s, p.radius * s);
  return shapes::ellipsoid(p.center * s, p.radii * s, Affine::rotate_xyz(p.rotation));
}

Vec3 organ_center(const OrganSpec& o) {
  Vec3 c{0, 0, 0};
  for (const auto& p : o.parts) c += p.kind == PrimitiveKind::Capsule ? (p.a + p.b) * 0.5 : p.center;
  return c / static_cast<double>(o.parts.size());
}

// Coarse sample positions along one axis: every `stride`-th voxel plus the last.
std::vector<int> coarse_axis(int n, int stride) {
  std::vector<int> out;
  for (int i = 0; i < n; i += stride) out.push_back(i);
  if (out.back() != n - 1) out.push_back(n - 1);
  return out;
}

Vec3 random_unit(Rng& rng) {
  for (;;) {
    const Vec3 v{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
    const double n = norm(v);
    if (n > 1e-3 && n <= 1) return v / n;
  }
}

bool inside_limits(const ImplicitShape& s) {
  const Aabb b = s.bounds();
  const double lim = 0.9 * kSceneHalfExtent;
  for (int a = 0; a < 3; ++a)
    if (b.lo[a] < -lim || b.hi[a] > lim) return false;
  return true;
}

OrganSpec large_organ(Rng& rng, bool perturb) {
  OrganSpec o;
  o.name = "large";
  Primitive p;
  p.center = {uniform(rng, -0.08, 0.08), uniform(rng, -0.08, 0.08), uniform(rng, -0.08, 0.08)};
  p.radii = {uniform(rng, 0.3, 0.42), uniform(rng, 0.3, 0.42), uniform(rng, 0.3, 0.42)};
  p.rotation = {uniform(rng, -0.4, 0.4), uniform(rng, -0.4, 0.4), uniform(rng, -0.4, 0.4)};
  o.parts = {p};
  if (perturb) {
    o.amplitude = uniform(rng, 0.015, 0.03);
    o.frequency = uniform(rng, 3, 5);
    o.phase = {uniform(rng, 0, kTwoPi), uniform(rng, 0, kTwoPi), uniform(rng, 0, kTwoPi)};
  }
  o.level = 1.0;
  return o;
}

}  // namespace

void SceneSpec::validate() const {
  require(!organs.empty(), ErrorKind::InvalidArgument, "SceneSpec: no organs");
  for (int a = 0; a < 3; ++a) require(dims[a] >= 2, ErrorKind::InvalidArgument, "SceneSpec: dims must be >= 2");
  require(noise_std >= 0, ErrorKind::InvalidArgument, "SceneSpec: negative noise");
  require(mesh_factor >= 1, ErrorKind::InvalidArgument, "SceneSpec: mesh_factor must be >= 1");
  require(body_radius >= 0, ErrorKind::InvalidArgument, "SceneSpec: negative body radius");
  for (const auto& o : organs) {
    require(!o.parts.empty(), ErrorKind::InvalidArgument, "SceneSpec: organ '" + o.name + "' has no parts");
    for (const auto& p : o.parts) {
      if (p.kind == PrimitiveKind::Ellipsoid)
        require(p.radii.x > 0 && p.radii.y > 0 && p.radii.z > 0, ErrorKind::InvalidArgument,
                "SceneSpec: ellipsoid radii must be positive");
      else
        require(p.radius > 0, ErrorKind::InvalidArgument, "SceneSpec: capsule radius must be positive");
    }
    require(inside_limits(organ_shape(o)), ErrorKind::InvalidArgument,
            "SceneSpec: organ '" + o.name + "' leaves [-0.9, 0.9]^3");
  }
}

std::string SceneSpec::to_json() const {
  ordered_json j;
  j["dims"] = {dims[0], dims[1], dims[2]};
  j["seed"] = seed;
  j["background"] = background;
  j["body_radius"] = body_radius;
  j["body_level"] = body_level;
  j["noise_std"] = noise_std;
  j["mesh_factor"] = mesh_factor;
  j["mesh_smooth_iterations"] = mesh_smooth_iterations;
  j["mesh_smooth_lambda"] = mesh_smooth_lambda;
  auto& arr = j["organs"] = ordered_json::array();
  for (const auto& o : organs) {
    ordered_json oj;
    oj["name"] = o.name;
    oj["level"] = o.level;
    oj["blend"] = o.blend;
    oj["amplitude"] = o.amplitude;
    oj["frequency"] = o.frequency;
    oj["phase"] = vec_json(o.phase);
    auto& parts = oj["parts"] = ordered_json::array();
    for (const auto& p : o.parts) {
      if (p.kind == PrimitiveKind::Ellipsoid)
        parts.push_back({{"kind", "ellipsoid"},
                         {"center", vec_json(p.center)},
                         {"radii", vec_json(p.radii)},
                         {"rotation", vec_json(p.rotation)}});
      else
        parts.push_back({{"kind", "capsule"}, {"a", vec_json(p.a)}, {"b", vec_json(p.b)}, {"radius", p.radius}});
    }
    arr.push_back(oj);
  }
  return j.dump(2);
}

SceneSpec SceneSpec::from_json(const std::string& text) {
  SceneSpec s;
  try {
    const auto j = nlohmann::json::parse(text);
    for (int a = 0; a < 3; ++a) s.dims[a] = j.at("dims").at(a).get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.background = j.at("background").get<double>();
    s.body_radius = j.at("body_radius").get<double>();
    s.body_level = j.at("body_level").get<double>();
    s.noise_std = j.at("noise_std").get<double>();
    s.mesh_factor = j.at("mesh_factor").get<int>();
    s.mesh_smooth_iterations = j.at("mesh_smooth_iterations").get<int>();
    s.mesh_smooth_lambda = j.at("mesh_smooth_lambda").get<double>();
    for (const auto& oj : j.at("organs")) {
      OrganSpec o;
      o.name = oj.at("name").get<std::string>();
      o.level = oj.at("level").get<double>();
      o.blend = oj.at("blend").get<double>();
      o.amplitude = oj.at("amplitude").get<double>();
      o.frequency = oj.at("frequency").get<double>();
      o.phase = vec_from(oj.at("phase"));
      for (const auto& pj : oj.at("parts")) {
        Primitive p;
        const auto kind = pj.at("kind").get<std::string>();
        if (kind == "ellipsoid") {
          p.center = vec_from(pj.at("center"));
          p.radii = vec_from(pj.at("radii"));
          p.rotation = vec_from(pj.at("rotation"));
        } else if (kind == "capsule") {
          p.kind = PrimitiveKind::Capsule;
          p.a = vec_from(pj.at("a"));
          p.b = vec_from(pj.at("b"));
          p.radius = pj.at("radius").get<double>();
        } else {
          fail(ErrorKind::Config, "SceneSpec: unknown primitive '" + kind + "'");
        }
        o.parts.push_back(p);
      }
      s.organs.push_back(o);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("SceneSpec: ") + e.what());
  }
  return s;
}

std::string SceneSpec::fingerprint() const { return organocc::fingerprint(to_json()); }

ImplicitShape organ_shape(const OrganSpec& organ) {
  require(!organ.parts.empty(), ErrorKind::InvalidArgument, "organ_shape: no parts");
  ImplicitShape s = primitive_shape(organ.parts.front());
  for (std::size_t i = 1; i < organ.parts.size(); ++i)
    s = shapes::smooth_union(s, primitive_shape(organ.parts[i]), organ.blend * kSceneHalfExtent);
  if (organ.amplitude != 0)
    s = shapes::perturbed(s, organ_center(organ) * kSceneHalfExtent, organ.amplitude * kSceneHalfExtent,
                          organ.frequency, organ.phase);
  return s;
}

CoordinateFrame scene_frame(const Dims3& dims) {
  CoordinateFrame f;
  f.dims = dims;
  for (int a = 0; a < 3; ++a) {
    f.spacing[a] = 2 * kSceneHalfExtent / dims[a];
    f.origin[a] = -kSceneHalfExtent + f.spacing[a] / 2;
  }
  return f;
}

VolumeGrid sdf_grid(const ImplicitShape& shape, const CoordinateFrame& frame, int stride, double lipschitz,
                    double slack) {
  VolumeGrid g = VolumeGrid::from_frame(frame);
  const int nx = frame.dims[0], ny = frame.dims[1], nz = frame.dims[2];
  auto eval = [&](int i, int j, int k) { return shape.sdf(g.world_of(i, j, k)); };
  if (stride <= 1) {
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) g.at(i, j, k) = eval(i, j, k);
    return g;
  }
  const auto cx = coarse_axis(nx, stride), cy = coarse_axis(ny, stride), cz = coarse_axis(nz, stride);
  std::vector<double> coarse(cx.size() * cy.size() * cz.size());
  auto cidx = [&](std::size_t a, std::size_t b, std::size_t c) { return (c * cy.size() + b) * cx.size() + a; };
  for (std::size_t c = 0; c < cz.size(); ++c)
    for (std::size_t b = 0; b < cy.size(); ++b)
      for (std::size_t a = 0; a < cx.size(); ++a) coarse[cidx(a, b, c)] = eval(cx[a], cy[b], cz[c]);

  std::vector<std::uint8_t> done(g.size(), 0);
  for (std::size_t c = 0; c + 1 < std::max<std::size_t>(cz.size(), 2); ++c)
    for (std::size_t b = 0; b + 1 < std::max<std::size_t>(cy.size(), 2); ++b)
      for (std::size_t a = 0; a + 1 < std::max<std::size_t>(cx.size(), 2); ++a) {
        const std::size_t a1 = std::min(a + 1, cx.size() - 1), b1 = std::min(b + 1, cy.size() - 1),
                          c1 = std::min(c + 1, cz.size() - 1);
        const int x0 = cx[a], x1 = cx[a1], y0 = cy[b], y1 = cy[b1], z0 = cz[c], z1 = cz[c1];
        double v[8];
        double closest = INFINITY;
        for (int n = 0; n < 8; ++n) {
          v[n] = coarse[cidx(n & 1 ? a1 : a, n & 2 ? b1 : b, n & 4 ? c1 : c)];
          closest = std::min(closest, std::abs(v[n]));
        }
        const Vec3 span{(x1 - x0) * frame.spacing.x, (y1 - y0) * frame.spacing.y, (z1 - z0) * frame.spacing.z};
        const bool near = closest <= lipschitz * norm(span) + slack;
        for (int z = z0; z <= z1; ++z)
          for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
              const std::size_t id = g.index(x, y, z);
              if (done[id] == 2) continue;
              if (near) {
                g.values[id] = eval(x, y, z);
                done[id] = 2;
              } else if (done[id] == 0) {
                const double tx = x1 > x0 ? double(x - x0) / (x1 - x0) : 0;
                const double ty = y1 > y0 ? double(y - y0) / (y1 - y0) : 0;
                const double tz = z1 > z0 ? double(z - z0) / (z1 - z0) : 0;
                double acc = 0;
                for (int n = 0; n < 8; ++n)
                  acc += v[n] * (n & 1 ? tx : 1 - tx) * (n & 2 ? ty : 1 - ty) * (n & 4 ? tz : 1 - tz);
                g.values[id] = acc;
                done[id] = 1;
              }
            }
      }
  return g;
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Scene scene;
  scene.spec = spec;
  for (const auto& o : spec.organs) scene.shapes.push_back(organ_shape(o));

  // Ground-truth meshes and the overlap check share one fine grid per organ.
  const CoordinateFrame fine =
      scene_frame({spec.dims[0] * spec.mesh_factor, spec.dims[1] * spec.mesh_factor, spec.dims[2] * spec.mesh_factor});
  std::vector<std::uint8_t> claimed(static_cast<std::size_t>(volume_of(fine.dims)), 0);
  for (std::size_t o = 0; o < scene.shapes.size(); ++o) {
    VolumeGrid g = sdf_grid(scene.shapes[o], fine, 4, 1.5, 2 * std::abs(spec.organs[o].amplitude) * kSceneHalfExtent);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g.values[i] < 0) {
        require(!claimed[i], ErrorKind::Config,
                "generate_scene: organ '" + spec.organs[o].name + "' overlaps another organ");
        claimed[i] = 1;
      }
      g.values[i] = -g.values[i];  // inside high so the mesh faces outward
    }
    scene.meshes.push_back(
        smooth_mesh(marching_cubes(g, 0.0), spec.mesh_smooth_iterations, spec.mesh_smooth_lambda));
  }

  const CoordinateFrame f = scene_frame(spec.dims);
  VolumeGrid raw = VolumeGrid::from_frame(f, spec.background);
  const ImplicitShape body =
      spec.body_radius > 0 ? shapes::sphere({0, 0, 0}, spec.body_radius * kSceneHalfExtent) : ImplicitShape{};
  std::vector<std::uint8_t> in_body(raw.size(), 0);
  for (int k = 0; k < f.dims[2]; ++k)
    for (int j = 0; j < f.dims[1]; ++j)
      for (int i = 0; i < f.dims[0]; ++i) {
        const Vec3 p = raw.world_of(i, j, k);
        const std::size_t id = raw.index(i, j, k);
        double v = spec.background;
        if (spec.body_radius > 0 && body.sdf(p) < 0) {
          v += spec.body_level;
          in_body[id] = 1;
        }
        for (std::size_t o = 0; o < scene.shapes.size(); ++o)
          if (scene.shapes[o].sdf(p) < 0) v += spec.organs[o].level;
        raw.values[id] = v;
      }

  // One 3^3 box pass with clamped borders; constant neighbourhoods stay exact.
  VolumeGrid v = raw;
  for (int k = 0; k < f.dims[2]; ++k)
    for (int j = 0; j < f.dims[1]; ++j)
      for (int i = 0; i < f.dims[0]; ++i) {
        double sum = 0, lo = INFINITY, hi = -INFINITY;
        for (int dk = -1; dk <= 1; ++dk)
          for (int dj = -1; dj <= 1; ++dj)
            for (int di = -1; di <= 1; ++di) {
              const double x = raw.at(std::clamp(i + di, 0, f.dims[0] - 1), std::clamp(j + dj, 0, f.dims[1] - 1),
                                      std::clamp(k + dk, 0, f.dims[2] - 1));
              sum += x;
              lo = std::min(lo, x);
              hi = std::max(hi, x);
            }
        v.at(i, j, k) = lo == hi ? lo : sum / 27.0;
      }

  if (spec.noise_std > 0) {
    Rng rng = make_rng(spec.seed, 0x6e6f697365);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double n = standard_normal(rng) * spec.noise_std;
      if (in_body[i] || spec.body_radius == 0) v.values[i] += n;
    }
  }
  scene.volume = std::move(v);
  return scene;
}

const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::SingleOrgan: return "single-organ";
    case ScenarioKind::ContactPair: return "contact-pair";
    case ScenarioKind::LargeAndCapsule: return "large-and-capsule";
  }
  return "?";
}

ScenarioKind scenario_from_string(const std::string& s) {
  for (auto k : {ScenarioKind::SingleOrgan, ScenarioKind::ContactPair, ScenarioKind::LargeAndCapsule})
    if (s == to_string(k)) return k;
  fail(ErrorKind::Config, "unknown scenario '" + s + "'");
}

std::string DatasetTemplate::to_json() const {
  ordered_json j;
  j["kind"] = to_string(kind);
  j["dims"] = {dims[0], dims[1], dims[2]};
  j["noise_std"] = noise_std;
  return j.dump();
}

DatasetTemplate DatasetTemplate::from_json(const std::string& text) {
  DatasetTemplate t;
  try {
    const auto j = nlohmann::json::parse(text);
    t.kind = scenario_from_string(j.at("kind").get<std::string>());
    for (int a = 0; a < 3; ++a) t.dims[a] = j.at("dims").at(a).get<int>();
    t.noise_std = j.at("noise_std").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("dataset template: ") + e.what());
  }
  return t;
}

SceneSpec random_scene_spec(const DatasetTemplate& t, std::uint64_t scene_seed) {
  Rng rng = make_rng(scene_seed, 0x73636e);
  SceneSpec s;
  s.dims = t.dims;
  s.noise_std = t.noise_std;
  s.seed = scene_seed;
  const double s_mm = kSceneHalfExtent;

  switch (t.kind) {
    case ScenarioKind::SingleOrgan:
      s.organs = {large_organ(rng, true)};
      break;

    case ScenarioKind::ContactPair: {
      OrganSpec large = large_organ(rng, false);
      const ImplicitShape ls = organ_shape(large);
      const Vec3 c0 = large.parts[0].center * s_mm;
      const double voxel_mm = 2 * s_mm / *std::max_element(t.dims.begin(), t.dims.end());
      for (;;) {
        const double rs = uniform(rng, 0.12, 0.18) * s_mm;
        const double gap = uniform(rng, 0.3, 0.9) * voxel_mm;
        const Vec3 d = random_unit(rng);
        // Bisection on the ray for sdf = rs + gap; the ellipsoid SDF is exact,
        // so the sphere then sits exactly `gap` from the large surface.
        double lo = 0, hi = 2 * s_mm;
        for (int it = 0; it < 200; ++it) {
          const double mid = 0.5 * (lo + hi);
          (ls.sdf(c0 + d * mid) < rs + gap ? lo : hi) = mid;
        }
        const Vec3 c = c0 + d * (0.5 * (lo + hi));
        OrganSpec small;
        small.name = "small";
        small.level = 1.8;
        Primitive p;
        p.center = c / s_mm;
        p.radii = Vec3{rs, rs, rs} / s_mm;
        small.parts = {p};
        if (!inside_limits(organ_shape(small))) continue;
        s.organs = {large, small};
        break;
      }
      break;
    }

    case ScenarioKind::LargeAndCapsule: {
      OrganSpec large = large_organ(rng, true);
      const ImplicitShape ls = organ_shape(large);
      for (;;) {
        const double len = uniform(rng, 0.2, 0.3), r = uniform(rng, 0.045, 0.06);
        const Vec3 mid{uniform(rng, -0.75, 0.75), uniform(rng, -0.75, 0.75), uniform(rng, -0.75, 0.75)};
        const Vec3 d = random_unit(rng);
        Primitive p;
        p.kind = PrimitiveKind::Capsule;
        p.a = mid - d * (len / 2);
        p.b = mid + d * (len / 2);
        p.radius = r;
        OrganSpec cap;
        cap.name = "small";
        cap.level = 0.8;
        cap.parts = {p};
        if (!inside_limits(organ_shape(cap))) continue;
        double clearance = INFINITY;
        for (int i = 0; i <= 16; ++i) clearance = std::min(clearance, ls.sdf((p.a + (p.b - p.a) * (i / 16.0)) * s_mm));
        if (clearance - r * s_mm < 2.0 + 2 * large.amplitude * s_mm) continue;
        s.organs = {large, cap};
        break;
      }
      break;
    }
  }
  s.validate();
  return s;
}

Dataset make_dataset(std::size_t n, const DatasetTemplate& t, std::uint64_t seed, int threads) {
  require(n >= 3, ErrorKind::InvalidArgument, "make_dataset: need at least 3 scenes");
  Dataset d;
  d.scenes.resize(n);
  parallel_for(n, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) d.scenes[i] = generate_scene(random_scene_spec(t, derive_seed(seed, i)));
  });
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 0x73706c6974);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
  const std::size_t quarter = std::max<std::size_t>(1, n / 4);
  const std::size_t n_train = n - 2 * quarter;
  d.train.assign(order.begin(), order.begin() + n_train);
  d.val.assign(order.begin() + n_train, order.begin() + n_train + quarter);
  d.test.assign(order.begin() + n_train + quarter, order.end());
  std::sort(d.train.begin(), d.train.end());
  std::sort(d.val.begin(), d.val.end());
  std::sort(d.test.begin(), d.test.end());
  return d;
}

void save_scene(const Scene& s, const std::string& dir, const std::string& stem, const std::string& meta_json) {
  const std::string base = dir + "/" + stem;
  ordered_json meta = ordered_json::parse(meta_json);
  meta["spec_fingerprint"] = s.spec.fingerprint();
  meta["seed"] = s.spec.seed;
  write_vol(s.volume, base + ".vol", meta.dump());
  write_text(base + ".json", s.spec.to_json() + "\n");
  for (std::size_t o = 0; o < s.meshes.size(); ++o)
    write_obj(s.meshes[o], base + "_" + s.spec.organs[o].name + ".obj",
              "spec_fingerprint " + s.spec.fingerprint() + "\nseed " + std::to_string(s.spec.seed));
}

Scene load_scene(const std::string& dir, const std::string& stem) {
  const std::string base = dir + "/" + stem;
  Scene s;
  s.spec = SceneSpec::from_json(read_text(base + ".json"));
  s.spec.validate();
  s.volume = read_vol(base + ".vol");
  require(s.volume.dims == s.spec.dims, ErrorKind::Io, "load_scene: volume dims disagree with spec");
  for (const auto& o : s.spec.organs) {
    s.shapes.push_back(organ_shape(o));
    s.meshes.push_back(read_obj(base + "_" + o.name + ".obj"));
  }
  return s;
}

}  // namespace organocc
