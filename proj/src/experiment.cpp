#include "organocc/experiment.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>

#include "organocc/error.hpp"
#include "organocc/io.hpp"
#include "organocc/shapes.hpp"
#include "json.hpp"

namespace organocc {

namespace {

using nlohmann::ordered_json;

constexpr std::uint64_t kDataStream = 0x64617461;   // "data"
constexpr std::uint64_t kQueryStream = 0x71756572;  // "quer"
constexpr std::uint64_t kPoseStream = 0x706f7365;   // "pose"

ordered_json dims_json(const Dims3& d) { return ordered_json::array({d[0], d[1], d[2]}); }
Dims3 dims_from(const nlohmann::json& j) { return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()}; }
Dims3 scaled(const Dims3& d, int s) { return {d[0] * s, d[1] * s, d[2] * s}; }

const char* to_string(LabelSource l) { return l == LabelSource::Exact ? "exact" : "mask"; }
const char* to_string(InferMode m) { return m == InferMode::Dense ? "dense" : "patch"; }

Dims3 effective_input_dims(const ExperimentConfig& cfg) {
  return cfg.input_dims == Dims3{0, 0, 0} ? cfg.data.dims : cfg.input_dims;
}

std::vector<TrainSample> samples_for(const Dataset& d, const std::vector<std::size_t>& idx,
                                     const ExperimentConfig& cfg) {
  std::vector<TrainSample> out;
  for (std::size_t i : idx) {
    Rng rng = query_rng(cfg, i);
    out.push_back(make_sample(d.scenes[i], cfg, rng));
  }
  return out;
}

MetricsReport empty_report(const ExperimentConfig& cfg) {
  MetricsReport r;
  r.seed = cfg.seed;
  r.fingerprint = cfg.fingerprint();
  r.surface_points = cfg.surface_points;
  r.voxel_dims = scaled(cfg.data.dims, cfg.out_scale);
  return r;
}

}  // namespace

std::uint64_t dataset_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, kDataStream); }

Rng query_rng(const ExperimentConfig& cfg, std::size_t scene) {
  return make_rng(derive_seed(cfg.seed, kQueryStream), scene);
}

VolumeGrid model_input(const Scene& s, const ExperimentConfig& cfg) {
  const Dims3 d = effective_input_dims(cfg);
  return prepare_input(d == s.volume.dims ? s.volume : resample(s.volume, d));
}

void ExperimentConfig::validate() const {
  require(scenes >= 3, ErrorKind::Config, "experiment: need at least 3 scenes");
  train.validate();
  require(out_scale >= 1, ErrorKind::Config, "experiment: out_scale must be >= 1");
  require(budget.boundary.size() == static_cast<std::size_t>(train.model.organs), ErrorKind::Config,
          "experiment: one boundary budget per organ");
  require(surface_points >= 1, ErrorKind::Config, "experiment: surface_points must be >= 1");
  if (infer == InferMode::Patch)
    require(train.mode == TrainMode::Patch, ErrorKind::Config, "experiment: patch inference needs patch training");
  if (train.mode == TrainMode::Patch)
    require(input_dims == Dims3{0, 0, 0} || input_dims == data.dims, ErrorKind::Config,
            "experiment: patch mode runs at scene resolution");
  if (posed_test) pose_cfg.validate();
}

std::string ExperimentConfig::to_json() const {
  ordered_json j;
  j["name"] = name;
  j["data"] = ordered_json::parse(data.to_json());
  j["scenes"] = scenes;
  j["seed"] = seed;
  j["budget"] = {{"volume", budget.volume}, {"boundary", budget.boundary}};
  auto& disp = j["budget"]["displacement"] = ordered_json::array();
  for (const auto& p : budget.displacement) disp.push_back({{"fraction", p.fraction}, {"sigma", p.sigma}});
  j["labels"] = to_string(labels);
  j["train"] = ordered_json::parse(train.to_json());
  j["input_dims"] = dims_json(input_dims);
  j["infer"] = to_string(infer);
  j["out_scale"] = out_scale;
  j["patch_size"] = dims_json(patch_size);
  j["recon"] = {{"iso", recon.iso}, {"smooth_iterations", recon.smooth_iterations}, {"smooth_lambda", recon.smooth_lambda}};
  j["surface_points"] = surface_points;
  j["baseline"] = baseline;
  j["posed_test"] = posed_test;
  j["pose_cfg"] = {{"translation", pose_cfg.translation},
                   {"rotation_deg", {pose_cfg.rotation_deg.x, pose_cfg.rotation_deg.y, pose_cfg.rotation_deg.z}},
                   {"scale_min", pose_cfg.scale_min},
                   {"scale_max", pose_cfg.scale_max}};
  // threads is an execution detail and stays out of the fingerprint.
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  ExperimentConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.contains("preset")) {
      c = experiment_preset(j["preset"].get<std::string>(), j.value("seed", std::uint64_t{0}), j.value("quick", false));
    }
    c.name = j.value("name", c.name);
    if (j.contains("data")) c.data = DatasetTemplate::from_json(j["data"].dump());
    c.scenes = j.value("scenes", c.scenes);
    c.seed = j.value("seed", c.seed);
    if (j.contains("budget")) {
      const auto& b = j["budget"];
      c.budget.volume = b.value("volume", c.budget.volume);
      if (b.contains("boundary")) c.budget.boundary = b["boundary"].get<std::vector<std::size_t>>();
      if (b.contains("displacement")) {
        c.budget.displacement.clear();
        for (const auto& p : b["displacement"])
          c.budget.displacement.push_back({p.at("fraction").get<double>(), p.at("sigma").get<double>()});
      }
    }
    if (j.contains("labels")) {
      const auto l = j["labels"].get<std::string>();
      require(l == "exact" || l == "mask", ErrorKind::Config, "experiment: labels must be exact or mask");
      c.labels = l == "exact" ? LabelSource::Exact : LabelSource::Mask;
    }
    if (j.contains("train")) c.train = TrainConfig::from_json(j["train"].dump());
    if (j.contains("input_dims")) c.input_dims = dims_from(j["input_dims"]);
    if (j.contains("infer")) {
      const auto m = j["infer"].get<std::string>();
      require(m == "dense" || m == "patch", ErrorKind::Config, "experiment: infer must be dense or patch");
      c.infer = m == "dense" ? InferMode::Dense : InferMode::Patch;
    }
    c.out_scale = j.value("out_scale", c.out_scale);
    if (j.contains("patch_size")) c.patch_size = dims_from(j["patch_size"]);
    if (j.contains("recon")) {
      c.recon.iso = j["recon"].value("iso", c.recon.iso);
      c.recon.smooth_iterations = j["recon"].value("smooth_iterations", c.recon.smooth_iterations);
      c.recon.smooth_lambda = j["recon"].value("smooth_lambda", c.recon.smooth_lambda);
    }
    c.surface_points = j.value("surface_points", c.surface_points);
    c.baseline = j.value("baseline", c.baseline);
    c.posed_test = j.value("posed_test", c.posed_test);
    if (j.contains("pose_cfg")) {
      const auto& a = j["pose_cfg"];
      c.pose_cfg.translation = a.value("translation", c.pose_cfg.translation);
      if (a.contains("rotation_deg"))
        c.pose_cfg.rotation_deg = {a["rotation_deg"].at(0).get<double>(), a["rotation_deg"].at(1).get<double>(),
                                   a["rotation_deg"].at(2).get<double>()};
      c.pose_cfg.scale_min = a.value("scale_min", c.pose_cfg.scale_min);
      c.pose_cfg.scale_max = a.value("scale_max", c.pose_cfg.scale_max);
    }
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string ExperimentConfig::fingerprint() const { return organocc::fingerprint(to_json()); }

std::vector<std::string> preset_names() {
  return {"single-organ",   "multi-organ-single-decoder", "multi-organ-multi-decoder",
          "augmentation-on", "augmentation-off",           "labels-exact",
          "labels-mask",     "patch-capsule",              "whole-capsule"};
}

ExperimentConfig experiment_preset(const std::string& name, std::uint64_t seed, bool quick) {
  ExperimentConfig c;
  c.name = name;
  c.seed = seed;
  c.train.seed = seed;
  c.train.model.base_channels = 8;
  c.train.model.hidden_dim = 128;
  c.train.model.organs = 1;
  c.train.lr = 1e-3;
  c.train.weight_decay = 1e-5;
  c.train.points = 4096;
  c.train.epochs = 60;
  c.train.val_every = 5;
  c.scenes = 12;

  auto two_organs = [&](ScenarioKind k) {
    c.data.kind = k;
    c.train.model.organs = 2;
    c.budget.boundary = {16384, 16384};
  };

  if (name == "single-organ") {
    c.scenes = 20;
    c.baseline = true;
  } else if (name == "multi-organ-single-decoder" || name == "multi-organ-multi-decoder") {
    two_organs(ScenarioKind::ContactPair);
    c.train.model.variant = name == "multi-organ-single-decoder" ? DecoderVariant::Single : DecoderVariant::Multi;
  } else if (name == "augmentation-on" || name == "augmentation-off") {
    c.train.augment = name == "augmentation-on";
    c.posed_test = true;
  } else if (name == "labels-exact" || name == "labels-mask") {
    c.labels = name == "labels-exact" ? LabelSource::Exact : LabelSource::Mask;
  } else if (name == "patch-capsule" || name == "whole-capsule") {
    two_organs(ScenarioKind::LargeAndCapsule);
    c.data.dims = {64, 64, 64};
    c.out_scale = 1;
    if (name == "patch-capsule") {
      c.train.mode = TrainMode::Patch;
      c.infer = InferMode::Patch;
      c.train.patch_size = c.patch_size;
    } else {
      c.input_dims = {32, 32, 32};
    }
  } else {
    fail(ErrorKind::Config, "unknown preset '" + name + "'");
  }

  if (quick) {
    c.scenes = 4;
    c.train.epochs = 2;
    c.budget.volume = 2048;
    for (auto& b : c.budget.boundary) b = 2048;
    c.train.points = 512;
    c.train.val_points = 512;
    c.train.val_every = 1;
    c.surface_points = 2000;
  }
  c.validate();
  return c;
}

TrainSample make_sample(const Scene& s, const ExperimentConfig& cfg, Rng& rng) {
  TrainSample t;
  t.volume = model_input(s, cfg);
  t.queries = build_queryset(s.shapes, s.meshes, s.volume, cfg.budget, rng);
  if (cfg.labels == LabelSource::Mask) {
    // Labels from the scene-resolution segmentation mask (nearest voxel).
    for (std::size_t o = 0; o < s.organs(); ++o) {
      const auto m = mask_labels(voxelize(s.shapes[o], s.volume.frame()), t.queries.coords);
      for (std::size_t i = 0; i < m.size(); ++i) t.queries.labels[i * t.queries.organs + o] = m[i];
    }
  }
  return t;
}

Scene pose_scene(const Scene& s, const Affine& a) {
  const Affine world = Affine::scale({kSceneHalfExtent, kSceneHalfExtent, kSceneHalfExtent}) * a *
                       Affine::scale({1 / kSceneHalfExtent, 1 / kSceneHalfExtent, 1 / kSceneHalfExtent});
  Scene out;
  out.spec = s.spec;
  VolumeGrid v = s.volume;
  v.fill = s.spec.background;
  out.volume = warp_volume(v, a);
  out.volume.fill.reset();
  for (const auto& sh : s.shapes) out.shapes.push_back(shapes::warped(sh, world));
  for (const auto& m : s.meshes) {
    TriMesh t = m;
    for (auto& p : t.vertices) p = world.apply(p);
    out.meshes.push_back(std::move(t));
  }
  return out;
}

OrganMetrics evaluate_organ(const VolumeGrid& prob, const Scene& s, std::size_t organ, const ExperimentConfig& cfg,
                            std::uint64_t seed) {
  const TriMesh mesh = reconstruct(prob, cfg.recon);
  OrganMetrics m;
  m.name = s.spec.organs[organ].name;
  if (mesh.empty()) {
    m.hd90 = m.assd = m.chamfer = INFINITY;
    m.missed = 1;
    const VolumeGrid gt = voxelize(s.shapes[organ], prob.frame());
    for (std::size_t i = 0; i < prob.size(); ++i) {
      m.voxels_pred += prob.values[i] >= 0.5;
      m.voxels_gt += gt.values[i] != 0.0;
    }
    m.iou = iou(prob, gt);
    return m;
  }
  EvalOptions opt;
  opt.surface_points = cfg.surface_points;
  opt.voxel_frame = prob.frame();
  opt.seed = seed;
  opt.threads = cfg.threads;
  m = evaluate(mesh, s.meshes[organ], opt, &s.shapes[organ]);
  m.name = s.spec.organs[organ].name;
  return m;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  const Dataset d = make_dataset(cfg.scenes, cfg.data, dataset_seed(cfg), cfg.threads);
  const auto train_set = samples_for(d, d.train, cfg);
  const auto val_set = samples_for(d, d.val, cfg);

  ExperimentResult res;
  const auto t0 = std::chrono::steady_clock::now();
  res.training = train(train_set, val_set, cfg.train);
  res.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.training.state.meta =
      ordered_json{{"experiment_fingerprint", cfg.fingerprint()}, {"train_fingerprint", cfg.train.fingerprint()},
                   {"seed", cfg.seed}}
          .dump();
  Network<float> net = clone_network(res.training.best);

  const Dims3 out_dims = scaled(cfg.data.dims, cfg.out_scale);
  std::vector<MetricsReport> imp, base;
  for (std::size_t idx : d.test) {
    Scene scene = d.scenes[idx];
    if (cfg.posed_test) {
      Rng rng = make_rng(derive_seed(cfg.seed, kPoseStream), idx);
      scene = pose_scene(scene, sample_affine(cfg.pose_cfg, rng).matrix);
    }
    const VolumeGrid input = model_input(scene, cfg);
    const auto probs = cfg.infer == InferMode::Dense
                           ? infer_dense(net, input, out_dims, 32768, cfg.threads)
                           : infer_patchwise(net, input, cfg.patch_size,
                                             {cfg.patch_size[0] / 2, cfg.patch_size[1] / 2, cfg.patch_size[2] / 2},
                                             cfg.out_scale, cfg.threads);
    SceneReport sr;
    sr.scene = idx;
    sr.implicit = empty_report(cfg);
    sr.baseline = empty_report(cfg);
    const std::uint64_t eval_seed = derive_seed(cfg.seed, idx);
    for (std::size_t o = 0; o < scene.organs(); ++o)
      sr.implicit.organs.push_back(evaluate_organ(probs[o], scene, o, cfg, eval_seed));
    if (cfg.baseline) {
      const auto low = infer_dense(net, input, input.dims, 32768, cfg.threads);
      for (std::size_t o = 0; o < scene.organs(); ++o)
        sr.baseline.organs.push_back(
            evaluate_organ(nearest_upsample_mask(low[o], out_dims), scene, o, cfg, eval_seed));
      base.push_back(sr.baseline);
    }
    imp.push_back(sr.implicit);

    if (!out_dir.empty()) {
      for (std::size_t o = 0; o < scene.organs(); ++o) {
        const TriMesh m = reconstruct(probs[o], cfg.recon);
        if (!m.empty())
          write_obj(m, out_dir + "/test" + std::to_string(idx) + "_" + scene.spec.organs[o].name + ".obj",
                    "config_fingerprint " + cfg.fingerprint() + "\nseed " + std::to_string(cfg.seed));
      }
    }
    res.scenes.push_back(std::move(sr));
  }
  res.summary = average_reports(imp);
  if (cfg.baseline) res.baseline_summary = average_reports(base);

  if (!out_dir.empty()) {
    write_text(out_dir + "/config.json", cfg.to_json() + "\n");
    save_checkpoint(res.training.net, res.training.state, out_dir + "/checkpoint.json");
    TrainingState best_state;
    best_state.seed = res.training.state.seed;
    best_state.meta = res.training.state.meta;
    save_checkpoint(res.training.best, best_state, out_dir + "/best.json");
    write_text(out_dir + "/loss.csv", "# config_fingerprint " + cfg.fingerprint() + " seed " +
                                          std::to_string(cfg.seed) + "\n" + loss_csv(res.training));
    ordered_json j = ordered_json::parse(res.summary.to_json());
    if (cfg.baseline) j["baseline"] = ordered_json::parse(res.baseline_summary.to_json());
    auto& per = j["scenes"] = ordered_json::array();
    for (const auto& s : res.scenes) {
      ordered_json e{{"scene", s.scene}, {"implicit", ordered_json::parse(s.implicit.to_json())}};
      if (cfg.baseline) e["baseline"] = ordered_json::parse(s.baseline.to_json());
      per.push_back(e);
    }
    write_text(out_dir + "/metrics.json", j.dump(2) + "\n");
    std::string table = "# " + cfg.name + " config_fingerprint " + cfg.fingerprint() + " seed " +
                        std::to_string(cfg.seed) + "\n" + res.summary.table();
    if (cfg.baseline) table += "# explicit baseline\n" + res.baseline_summary.table();
    write_text(out_dir + "/metrics.txt", table);
  }
  return res;
}

}  // namespace organocc
