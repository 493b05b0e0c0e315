#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "organocc/error.hpp"
#include "organocc/experiment.hpp"
#include "organocc/gradcheck.hpp"
#include "organocc/io.hpp"
#include "json.hpp"

namespace organocc {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 1;
  bool deterministic = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "experiment config JSON (may name a \"preset\")");
  sub->add_option("--seed", c.seed, "root seed");
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  sub->add_flag("--deterministic", c.deterministic, "single-threaded run");
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return kExitUsage;
    case ErrorKind::Numeric: return kExitNumeric;
    default: return kExitData;
  }
}

void report_error(std::ostream& err, const std::string& kind, const std::string& msg) {
  err << ordered_json{{"error", kind}, {"message", msg}}.dump() << "\n";
}

int effective_threads(const Common& c) { return c.deterministic ? 1 : c.threads; }

void apply_overrides(ExperimentConfig& cfg, const Common& c) {
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.train.seed = *c.seed;
  }
  cfg.threads = effective_threads(c);
  cfg.validate();
}

ExperimentConfig config_from_file(const std::string& path) {
  require(fs::exists(path), ErrorKind::Config, "config file not found: " + path);
  return ExperimentConfig::from_json(read_text(path));
}

// Config precedence: --config, then the one stored with the data, then the
// single-organ preset.
ExperimentConfig resolve_config(const Common& c, const std::optional<ExperimentConfig>& stored) {
  ExperimentConfig cfg;
  if (!c.config.empty())
    cfg = config_from_file(c.config);
  else if (stored)
    cfg = *stored;
  else
    cfg = experiment_preset("single-organ", c.seed.value_or(0));
  apply_overrides(cfg, c);
  return cfg;
}

std::string artifact_meta(const ExperimentConfig& cfg, ordered_json extra = ordered_json::object()) {
  extra["config_fingerprint"] = cfg.fingerprint();
  extra["seed"] = cfg.seed;
  return extra.dump();
}

std::string comment_header(const ExperimentConfig& cfg) {
  return "config_fingerprint " + cfg.fingerprint() + "\nseed " + std::to_string(cfg.seed);
}

std::string scene_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03zu", i);
  return buf;
}

std::string out_dir_or(const Common& c, const std::string& fallback) {
  const std::string d = c.out.empty() ? fallback : c.out;
  require(!d.empty(), ErrorKind::Config, "--out is required");
  fs::create_directories(d);
  return d;
}

struct DatasetIndex {
  ExperimentConfig cfg;
  std::vector<std::string> stems;
  std::vector<std::size_t> train, val, test;
};

DatasetIndex read_dataset(const std::string& dir) {
  const std::string path = dir + "/dataset.json";
  require(fs::exists(path), ErrorKind::Io, "no dataset.json in " + dir);
  DatasetIndex d;
  try {
    const auto j = nlohmann::json::parse(read_text(path));
    d.cfg = ExperimentConfig::from_json(j.at("config").dump());
    d.stems = j.at("scenes").get<std::vector<std::string>>();
    d.train = j.at("split").at("train").get<std::vector<std::size_t>>();
    d.val = j.at("split").at("val").get<std::vector<std::size_t>>();
    d.test = j.at("split").at("test").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, "bad dataset.json: " + std::string(e.what()));
  }
  for (auto idx : {&d.train, &d.val, &d.test})
    for (std::size_t i : *idx) require(i < d.stems.size(), ErrorKind::Io, "dataset.json: split index out of range");
  return d;
}

// Training history travels in the checkpoint meta so a resumed run can
// continue the exact schedule.
ordered_json history_json(const TrainResult& r) {
  ordered_json h;
  h["best_epoch"] = r.best_epoch;
  h["best_val_loss"] = std::isfinite(r.best_val_loss) ? ordered_json(r.best_val_loss) : ordered_json(nullptr);
  h["epoch_loss"] = r.epoch_loss;
  h["val_loss"] = r.val_loss;
  auto& t = h["trace"] = ordered_json::array();
  for (const auto& rec : r.trace) t.push_back({rec.step, rec.epoch, rec.loss, rec.per_organ});
  return h;
}

void restore_history(TrainResult& r, const nlohmann::json& h) {
  r.best_epoch = h.at("best_epoch").get<int>();
  r.best_val_loss = h.at("best_val_loss").is_null() ? INFINITY : h.at("best_val_loss").get<double>();
  r.epoch_loss = h.at("epoch_loss").get<std::vector<double>>();
  r.val_loss = h.at("val_loss").get<std::vector<double>>();
  for (const auto& e : h.at("trace")) {
    LossRecord rec;
    rec.step = e.at(0).get<std::int64_t>();
    rec.epoch = e.at(1).get<int>();
    rec.loss = e.at(2).get<double>();
    rec.per_organ = e.at(3).get<std::vector<double>>();
    r.trace.push_back(std::move(rec));
  }
}

Network<float> load_network(const std::string& path, TrainingState& st) {
  Network<float> net(read_checkpoint_config(path), 0);
  load_checkpoint(path, net, st);
  return net;
}

TrainResult load_resume(const std::string& path, const ModelConfig& expected) {
  TrainResult r;
  r.net = Network<float>(expected, 0);
  load_checkpoint(path, r.net, r.state, &expected);
  const auto meta = nlohmann::json::parse(r.state.meta);
  require(meta.contains("history"), ErrorKind::Io, "checkpoint has no training history: " + path);
  try {
    restore_history(r, meta["history"]);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, "bad training history in " + path + ": " + e.what());
  }
  const fs::path best = fs::path(path).parent_path() / "best.json";
  if (fs::exists(best)) {
    TrainingState ignored;
    r.best = Network<float>(expected, 0);
    load_checkpoint(best.string(), r.best, ignored, &expected);
  } else {
    r.best = clone_network(r.net);
  }
  return r;
}

// synth ----------------------------------------------------------------------

struct SynthArgs {
  Common c;
  std::optional<std::size_t> scenes;
  std::string scenario;
  std::optional<int> dims;
  std::optional<double> noise;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  ExperimentConfig cfg = resolve_config(a.c, std::nullopt);
  if (a.scenes) cfg.scenes = *a.scenes;
  if (!a.scenario.empty()) cfg.data.kind = scenario_from_string(a.scenario);
  if (a.dims) cfg.data.dims = {*a.dims, *a.dims, *a.dims};
  if (a.noise) cfg.data.noise_std = *a.noise;
  const int organs = cfg.data.kind == ScenarioKind::SingleOrgan ? 1 : 2;
  if (cfg.train.model.organs != organs) {
    cfg.train.model.organs = organs;
    cfg.budget.boundary.assign(organs, cfg.budget.boundary.empty() ? 16384 : cfg.budget.boundary.front());
  }
  cfg.validate();
  const std::string dir = out_dir_or(a.c, "");

  const Dataset d = make_dataset(cfg.scenes, cfg.data, dataset_seed(cfg), cfg.threads);
  ordered_json j;
  j["config_fingerprint"] = cfg.fingerprint();
  j["seed"] = cfg.seed;
  j["config"] = ordered_json::parse(cfg.to_json());
  auto& stems = j["scenes"] = ordered_json::array();
  for (std::size_t i = 0; i < d.scenes.size(); ++i) {
    save_scene(d.scenes[i], dir, scene_stem(i), artifact_meta(cfg, {{"scene", i}}));
    stems.push_back(scene_stem(i));
  }
  j["split"] = {{"train", d.train}, {"val", d.val}, {"test", d.test}};
  write_text(dir + "/dataset.json", j.dump(2) + "\n");
  out << "wrote " << d.scenes.size() << " scenes (" << to_string(cfg.data.kind) << ", " << cfg.data.dims[0] << "x"
      << cfg.data.dims[1] << "x" << cfg.data.dims[2] << ") to " << dir << "\n";
  return kExitOk;
}

// sample ---------------------------------------------------------------------

struct DataArgs {
  Common c;
  std::string data;
};

int cmd_sample(const DataArgs& a, std::ostream& out) {
  const DatasetIndex d = read_dataset(a.data);
  const ExperimentConfig cfg = resolve_config(a.c, d.cfg);
  const std::string dir = out_dir_or(a.c, a.data);
  std::size_t total = 0;
  for (std::size_t i = 0; i < d.stems.size(); ++i) {
    const Scene s = load_scene(a.data, d.stems[i]);
    Rng rng = query_rng(cfg, i);
    const QuerySet q = make_sample(s, cfg, rng).queries;
    write_queryset(q, dir + "/" + d.stems[i] + ".qs.json", artifact_meta(cfg, {{"scene", i}}));
    total += q.size();
  }
  out << "wrote " << d.stems.size() << " query sets, " << total << " points\n";
  return kExitOk;
}

// train ----------------------------------------------------------------------

struct TrainArgs {
  Common c;
  std::string data;
  std::string queries;
  std::string resume;
  std::optional<int> epochs;
};

std::vector<TrainSample> load_samples(const DatasetIndex& d, const std::vector<std::size_t>& idx,
                                      const ExperimentConfig& cfg, const std::string& data_dir,
                                      const std::string& query_dir) {
  std::vector<TrainSample> out;
  for (std::size_t i : idx) {
    const Scene s = load_scene(data_dir, d.stems[i]);
    const std::string qpath = query_dir + "/" + d.stems[i] + ".qs.json";
    if (fs::exists(qpath)) {
      TrainSample t{model_input(s, cfg), read_queryset(qpath)};
      require(t.queries.organs == cfg.train.model.organs, ErrorKind::InvalidArgument,
              qpath + ": organ count differs from the model");
      out.push_back(std::move(t));
    } else {
      Rng rng = query_rng(cfg, i);
      out.push_back(make_sample(s, cfg, rng));
    }
  }
  return out;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const DatasetIndex d = read_dataset(a.data);
  ExperimentConfig cfg = resolve_config(a.c, d.cfg);
  if (a.epochs) {
    cfg.train.epochs = *a.epochs;
    cfg.validate();
  }
  const std::string dir = out_dir_or(a.c, "");
  const std::string qdir = a.queries.empty() ? a.data : a.queries;
  const auto train_set = load_samples(d, d.train, cfg, a.data, qdir);
  const auto val_set = load_samples(d, d.val, cfg, a.data, qdir);

  std::optional<TrainResult> resume;
  if (!a.resume.empty()) resume = load_resume(a.resume, cfg.train.model);
  TrainResult r = train(train_set, val_set, cfg.train, resume ? &*resume : nullptr);

  ordered_json meta = ordered_json::parse(artifact_meta(cfg));
  meta["train_fingerprint"] = cfg.train.fingerprint();
  meta["history"] = history_json(r);
  r.state.meta = meta.dump();
  write_text(dir + "/config.json", cfg.to_json() + "\n");
  save_checkpoint(r.net, r.state, dir + "/checkpoint.json");
  TrainingState best_state;
  best_state.seed = r.state.seed;
  best_state.meta = artifact_meta(cfg, {{"best_epoch", r.best_epoch}});
  save_checkpoint(r.best, best_state, dir + "/best.json");
  write_text(dir + "/loss.csv", "# " + comment_header(cfg) + "\n" + loss_csv(r));

  out << "steps " << r.state.step << "  final epoch loss "
      << (r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back()) << "  best epoch " << r.best_epoch << "\n";
  return kExitOk;
}

// reconstruct ----------------------------------------------------------------

struct ReconArgs {
  Common c;
  std::string checkpoint;
  std::string volume;
  std::string mode;
  std::optional<int> out_scale;
};

int cmd_reconstruct(const ReconArgs& a, std::ostream& out) {
  ExperimentConfig cfg = resolve_config(a.c, std::nullopt);
  if (!a.mode.empty()) {
    require(a.mode == "dense" || a.mode == "patch", ErrorKind::Config, "--mode must be dense or patch");
    cfg.infer = a.mode == "dense" ? InferMode::Dense : InferMode::Patch;
  }
  if (a.out_scale) cfg.out_scale = *a.out_scale;
  require(cfg.out_scale >= 1, ErrorKind::Config, "--out-scale must be >= 1");
  const std::string dir = out_dir_or(a.c, "");

  TrainingState st;
  Network<float> net = load_network(a.checkpoint, st);
  VolumeGrid v = read_vol(a.volume);
  const Dims3 in_dims = cfg.input_dims == Dims3{0, 0, 0} ? v.dims : cfg.input_dims;
  const VolumeGrid input = prepare_input(in_dims == v.dims ? v : resample(v, in_dims));
  const Dims3 out_dims{v.dims[0] * cfg.out_scale, v.dims[1] * cfg.out_scale, v.dims[2] * cfg.out_scale};
  const auto probs =
      cfg.infer == InferMode::Dense
          ? infer_dense(net, input, out_dims, 32768, cfg.threads)
          : infer_patchwise(net, input, cfg.patch_size,
                            {cfg.patch_size[0] / 2, cfg.patch_size[1] / 2, cfg.patch_size[2] / 2}, cfg.out_scale,
                            cfg.threads);

  const std::string ckpt_fp = net.config().fingerprint();
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const std::string stem = dir + "/organ" + std::to_string(k);
    write_vol(probs[k], stem + "_prob.vol", artifact_meta(cfg, {{"checkpoint_fingerprint", ckpt_fp}, {"organ", k}}));
    const TriMesh m = reconstruct(probs[k], cfg.recon);
    if (m.empty()) {
      out << "organ" << k << ": empty level set, no mesh written\n";
      continue;
    }
    write_obj(m, stem + ".obj", comment_header(cfg) + "\ncheckpoint_fingerprint " + ckpt_fp);
    out << "organ" << k << ": " << m.vertices.size() << " vertices, " << m.triangles.size() << " triangles\n";
  }
  return kExitOk;
}

// evaluate -------------------------------------------------------------------

struct EvalArgs {
  Common c;
  std::string pred, gt, pred_grid, gt_grid, frame;
  std::size_t points = 10000;
};

int cmd_evaluate(const EvalArgs& a, std::ostream& out) {
  const bool meshes = !a.pred.empty() || !a.gt.empty();
  const bool grids = !a.pred_grid.empty() || !a.gt_grid.empty();
  require(meshes || grids, ErrorKind::Config, "evaluate needs --pred/--gt meshes or --pred-grid/--gt-grid");
  require(!meshes || (!a.pred.empty() && !a.gt.empty()), ErrorKind::Config, "--pred and --gt go together");
  require(!grids || (!a.pred_grid.empty() && !a.gt_grid.empty()), ErrorKind::Config,
          "--pred-grid and --gt-grid go together");
  const std::uint64_t seed = a.c.seed.value_or(0);

  MetricsReport rep;
  rep.seed = seed;
  rep.surface_points = a.points;
  OrganMetrics m;
  std::optional<VolumeGrid> pg, gg;
  if (grids) {
    pg = read_vol(a.pred_grid);
    gg = read_vol(a.gt_grid);
    require(pg->frame().same_grid(gg->frame()), ErrorKind::FrameMismatch,
            "prediction and ground-truth grids have different frames");
  }
  if (meshes) {
    EvalOptions opt;
    opt.surface_points = a.points;
    opt.seed = seed;
    opt.threads = effective_threads(a.c);
    opt.voxel_frame = !a.frame.empty() ? read_vol(a.frame).frame()
                      : pg           ? pg->frame()
                                     : scene_frame({64, 64, 64});
    m = evaluate(read_obj(a.pred), read_obj(a.gt), opt);
    rep.voxel_dims = opt.voxel_frame.dims;
  }
  if (grids) {
    m.iou = iou(*pg, *gg);
    rep.voxel_dims = pg->dims;
  }
  m.name = "organ";
  rep.organs.push_back(m);
  rep.fingerprint = fingerprint(ordered_json{{"pred", a.pred},
                                             {"gt", a.gt},
                                             {"pred_grid", a.pred_grid},
                                             {"gt_grid", a.gt_grid},
                                             {"points", a.points}}
                                    .dump());
  if (!a.c.out.empty()) {
    fs::create_directories(a.c.out);
    write_text(a.c.out + "/metrics.json", rep.to_json() + "\n");
  }
  out << rep.table();
  return kExitOk;
}

// gradcheck ------------------------------------------------------------------

int cmd_gradcheck(const Common& c, double tolerance, std::ostream& out) {
  const std::uint64_t seed = c.seed.value_or(1);
  const auto entries = run_gradcheck_suite(seed, tolerance);
  bool ok = true;
  ordered_json j;
  j["seed"] = seed;
  j["tolerance"] = tolerance;
  j["config_fingerprint"] = fingerprint(ordered_json{{"seed", seed}, {"tolerance", tolerance}}.dump());
  auto& arr = j["ops"] = ordered_json::array();
  char line[256];
  std::snprintf(line, sizeof line, "%-50s %12s %8s %6s %s\n", "op", "max_rel_err", "checked", "kinks", "status");
  out << line;
  for (const auto& e : entries) {
    ok = ok && e.passed;
    std::snprintf(line, sizeof line, "%-50s %12.3e %8zu %6zu %s\n", e.op.c_str(), e.max_rel_error, e.checked, e.kinks,
                  e.passed ? "ok" : "FAIL");
    out << line;
    arr.push_back({{"op", e.op},
                   {"max_rel_error", e.max_rel_error},
                   {"checked", e.checked},
                   {"kinks", e.kinks},
                   {"worst", e.worst},
                   {"passed", e.passed}});
  }
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_text(c.out + "/gradcheck.json", j.dump(2) + "\n");
  }
  require(ok, ErrorKind::Numeric, "gradient check failed");
  return kExitOk;
}

// repro ----------------------------------------------------------------------

struct ReproArgs {
  Common c;
  std::string preset;
  bool quick = false;
};

int cmd_repro(const ReproArgs& a, std::ostream& out) {
  ExperimentConfig cfg = experiment_preset(a.preset, a.c.seed.value_or(0), a.quick);
  if (!a.c.config.empty()) {
    // Merge patch over the preset.
    auto j = nlohmann::json::parse(cfg.to_json());
    try {
      j.merge_patch(nlohmann::json::parse(read_text(a.c.config)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Config, "bad override config: " + std::string(e.what()));
    }
    cfg = ExperimentConfig::from_json(j.dump());
  }
  apply_overrides(cfg, a.c);
  const std::string dir = out_dir_or(a.c, "repro-" + a.preset);
  const ExperimentResult r = run_experiment(cfg, dir);
  out << "# " << cfg.name << " seed " << cfg.seed << " config_fingerprint " << cfg.fingerprint() << "\n"
      << r.summary.table();
  if (cfg.baseline) out << "# explicit baseline\n" << r.baseline_summary.table();
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Implicit multi-organ segmentation toolkit", "organocc"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(s_synth, synth.c);
  s_synth->add_option("--scenes", synth.scenes, "number of scenes");
  s_synth->add_option("--scenario", synth.scenario, "single-organ | contact-pair | large-and-capsule");
  s_synth->add_option("--dims", synth.dims, "cubic grid size")->check(CLI::PositiveNumber);
  s_synth->add_option("--noise", synth.noise, "intensity noise std")->check(CLI::NonNegativeNumber);

  DataArgs sample;
  auto* s_sample = app.add_subcommand("sample", "draw labeled query points for every scene");
  add_common(s_sample, sample.c);
  s_sample->add_option("--data", sample.data, "dataset directory")->required();

  TrainArgs tr;
  auto* s_train = app.add_subcommand("train", "train on a dataset");
  add_common(s_train, tr.c);
  s_train->add_option("--data", tr.data, "dataset directory")->required();
  s_train->add_option("--queries", tr.queries, "query set directory (default: dataset)");
  s_train->add_option("--resume", tr.resume, "checkpoint to continue from");
  s_train->add_option("--epochs", tr.epochs, "override epochs")->check(CLI::PositiveNumber);

  ReconArgs rec;
  auto* s_rec = app.add_subcommand("reconstruct", "infer occupancy and extract meshes");
  add_common(s_rec, rec.c);
  s_rec->add_option("--checkpoint", rec.checkpoint, "checkpoint manifest")->required();
  s_rec->add_option("--volume", rec.volume, "input .vol")->required();
  s_rec->add_option("--mode", rec.mode, "dense | patch");
  s_rec->add_option("--out-scale", rec.out_scale, "output grid factor");

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("evaluate", "surface and overlap metrics");
  add_common(s_eval, ev.c);
  s_eval->add_option("--pred", ev.pred, "predicted mesh (.obj)");
  s_eval->add_option("--gt", ev.gt, "reference mesh (.obj)");
  s_eval->add_option("--pred-grid", ev.pred_grid, "predicted occupancy (.vol)");
  s_eval->add_option("--gt-grid", ev.gt_grid, "reference mask (.vol)");
  s_eval->add_option("--frame", ev.frame, ".vol whose grid defines IoU voxelization");
  s_eval->add_option("--points", ev.points, "surface samples per mesh")->check(CLI::PositiveNumber);

  Common gc;
  double tolerance = kGradcheckTolerance;
  auto* s_grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(s_grad, gc);
  s_grad->add_option("--tolerance", tolerance, "max relative error")->check(CLI::PositiveNumber);

  ReproArgs rp;
  auto* s_repro = app.add_subcommand("repro", "run a named experiment preset end to end");
  add_common(s_repro, rp.c);
  s_repro->add_option("preset", rp.preset, "preset name")->required()->check(CLI::IsMember(preset_names()));
  s_repro->add_flag("--quick", rp.quick, "shrunken smoke-test budget");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    report_error(err, "usage", e.what());
    return kExitUsage;
  }

  try {
    if (*s_synth) return cmd_synth(synth, out);
    if (*s_sample) return cmd_sample(sample, out);
    if (*s_train) return cmd_train(tr, out);
    if (*s_rec) return cmd_reconstruct(rec, out);
    if (*s_eval) return cmd_evaluate(ev, out);
    if (*s_grad) return cmd_gradcheck(gc, tolerance, out);
    if (*s_repro) return cmd_repro(rp, out);
  } catch (const Error& e) {
    report_error(err, to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    report_error(err, "io", e.what());
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    report_error(err, "io", e.what());
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace organocc
