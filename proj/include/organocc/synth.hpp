#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "organocc/geometry.hpp"
#include "organocc/rng.hpp"
#include "organocc/volume.hpp"

namespace organocc {

// Scenes live in the box [-32, 32]^3 mm; spec geometry is given in normalized
// units, so world = kSceneHalfExtent * normalized.
inline constexpr double kSceneHalfExtent = 32.0;

enum class PrimitiveKind { Ellipsoid, Capsule };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Ellipsoid;
  Vec3 center{0, 0, 0};
  Vec3 radii{0.4, 0.4, 0.4};
  Vec3 rotation{0, 0, 0};  // radians, x then y then z
  Vec3 a{0, 0, 0}, b{0, 0, 0};
  double radius = 0.1;
};

struct OrganSpec {
  std::string name = "organ";
  std::vector<Primitive> parts;  // blended by smooth union when > 1
  double blend = 0.05;
  double amplitude = 0;  // radial sinusoidal perturbation
  double frequency = 0;
  Vec3 phase{0, 0, 0};
  double level = 1.0;  // intensity added inside the organ
};

struct SceneSpec {
  std::vector<OrganSpec> organs;
  double background = 0;
  // Soft-tissue region: noise and body_level apply only inside it; outside
  // stays exactly `background` (air). body_radius 0 disables it.
  double body_radius = 0.95;
  double body_level = 0.2;
  double noise_std = 0.05;
  Dims3 dims{32, 32, 32};
  std::uint64_t seed = 0;
  int mesh_factor = 4;
  int mesh_smooth_iterations = 2;
  double mesh_smooth_lambda = 0.5;

  // Throws InvalidArgument on malformed fields or organs outside [-0.9,0.9]^3.
  void validate() const;
  std::string to_json() const;
  static SceneSpec from_json(const std::string& text);
  std::string fingerprint() const;
};

// Analytic organ shape in world mm.
ImplicitShape organ_shape(const OrganSpec& organ);
CoordinateFrame scene_frame(const Dims3& dims);

struct Scene {
  SceneSpec spec;
  VolumeGrid volume;
  std::vector<ImplicitShape> shapes;  // world mm
  std::vector<TriMesh> meshes;        // world mm, outward normals
  std::size_t organs() const { return shapes.size(); }
};

// SDF of `shape` on a frame, evaluated exactly only inside coarse cells that
// can contain the surface; other voxels hold a same-sign interpolant. Assumes
// |sdf(x) - sdf(y)| <= lipschitz * |x - y| + slack. Exact when stride <= 1.
VolumeGrid sdf_grid(const ImplicitShape& shape, const CoordinateFrame& frame, int stride = 4, double lipschitz = 1.5,
                    double slack = 0.0);

// Throws Config when two organ interiors overlap.
Scene generate_scene(const SceneSpec& spec);

enum class ScenarioKind { SingleOrgan, ContactPair, LargeAndCapsule };
const char* to_string(ScenarioKind k);
ScenarioKind scenario_from_string(const std::string& s);

struct DatasetTemplate {
  ScenarioKind kind = ScenarioKind::SingleOrgan;
  Dims3 dims{32, 32, 32};
  double noise_std = 0.05;
  std::string to_json() const;
  static DatasetTemplate from_json(const std::string& text);
};

// Randomized spec for one scene. ContactPair places a sphere at a surface gap
// of (0, 1] voxel from an unperturbed ellipsoid.
SceneSpec random_scene_spec(const DatasetTemplate& t, std::uint64_t scene_seed);

struct Dataset {
  std::vector<Scene> scenes;
  std::vector<std::size_t> train, val, test;  // scene indices
};

// Scene seeds derive from the root seed by index; 50/25/25 split by seeded shuffle.
Dataset make_dataset(std::size_t n, const DatasetTemplate& t, std::uint64_t seed, int threads = 1);

// `dir/stem.vol` (+ .raw), `dir/stem.json` spec, `dir/stem_<organ>.obj`.
void save_scene(const Scene& s, const std::string& dir, const std::string& stem, const std::string& meta_json = "{}");
Scene load_scene(const std::string& dir, const std::string& stem);

}  // namespace organocc
