#include "organocc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "organocc/error.hpp"
#include "organocc/io.hpp"
#include "organocc/parallel.hpp"
#include "organocc/rng.hpp"
#include "json.hpp"

namespace organocc {

namespace {

constexpr std::uint64_t kEpochStream = 0x65706f6368;  // "epoch"
constexpr std::uint64_t kStepStream = 0x73746570;     // "step"
constexpr std::uint64_t kValStream = 0x76616c;        // "val"
constexpr double kTwoPi = 6.283185307179586;

int encoder_divisor(const ModelConfig& m) { return 1 << (m.blocks - 1); }

struct Drawn {
  VolumeGrid volume;
  std::vector<Vec3> coords;
  std::vector<std::uint8_t> labels;
};

// One volume's contribution to a step: optional augmentation, optional patch
// draw with background rejection, then n points with replacement.
Drawn draw_example(const TrainSample& s, const TrainConfig& cfg, bool augment, std::size_t n, Rng& rng) {
  VolumeGrid vol;
  QuerySet q;
  if (augment) {
    std::tie(vol, q) = apply_paired(s.volume, s.queries, cfg.augment_cfg, rng);
  } else {
    vol = s.volume;
    q = s.queries;
  }
  if (cfg.mode == TrainMode::Patch) {
    PatchDraw p = draw_training_patch(vol, q, cfg, rng);
    vol = std::move(p.patch);
    q = std::move(p.queries);
  }
  require(q.size() > 0, ErrorKind::DegenerateInput, "train: volume has no query points");
  Drawn d;
  d.volume = std::move(vol);
  d.coords.reserve(n);
  d.labels.reserve(n * q.organs);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = uniform_index(rng, q.size());
    d.coords.push_back(q.coords[idx]);
    for (int k = 0; k < q.organs; ++k) d.labels.push_back(q.label(idx, k));
  }
  return d;
}

ad::Tensor<float> stack_volumes(const std::vector<Drawn>& items) {
  const Dims3 d = items.front().volume.dims;
  const std::size_t per = static_cast<std::size_t>(volume_of(d));
  std::vector<float> data;
  data.reserve(per * items.size());
  for (const auto& it : items) {
    require(it.volume.dims == d, ErrorKind::InvalidArgument, "train: batch volumes differ in size");
    for (double x : it.volume.values) data.push_back(static_cast<float>(x));
  }
  return ad::Tensor<float>({static_cast<int>(items.size()), 1, d[2], d[1], d[0]}, std::move(data));
}

double step_loss(Network<float>& net, const std::vector<Drawn>& items, bool train, std::vector<double>* per_organ,
                 ad::Tape<float>& tape, ad::Tensor<float>* loss_out) {
  const auto x = stack_volumes(items);
  std::vector<Vec3> pts;
  std::vector<std::uint8_t> labels;
  for (const auto& it : items) {
    pts.insert(pts.end(), it.coords.begin(), it.coords.end());
    labels.insert(labels.end(), it.labels.begin(), it.labels.end());
  }
  const auto pyr = net.encode(tape, x, train);
  const auto feats = net.query_features(tape, pyr, pts);
  const auto logits = net.decode(tape, feats);
  auto loss = net.loss(tape, logits, labels, per_organ);
  const double value = static_cast<double>(loss.data()[0]);
  if (loss_out) *loss_out = loss;
  return value;
}

double validation_loss(Network<float>& net, const std::vector<TrainSample>& val, const TrainConfig& cfg) {
  double total = 0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    Rng rng = make_rng(derive_seed(cfg.seed, kValStream), i);
    std::vector<Drawn> one{draw_example(val[i], cfg, false, cfg.val_points, rng)};
    ad::Tape<float> tape(false);
    total += step_loss(net, one, false, nullptr, tape, nullptr);
  }
  return total / static_cast<double>(val.size());
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(derive_seed(seed, kEpochStream), static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
  return order;
}

void check_samples(const std::vector<TrainSample>& set, const TrainConfig& cfg, const char* what) {
  const int div = encoder_divisor(cfg.model);
  for (const auto& s : set) {
    s.volume.validate();
    s.queries.validate();
    require(s.queries.organs == cfg.model.organs, ErrorKind::InvalidArgument,
            std::string("train: ") + what + " sample organ count differs from the model");
    if (cfg.mode == TrainMode::Whole) {
      for (int a = 0; a < 3; ++a)
        require(s.volume.dims[a] % div == 0, ErrorKind::InvalidArgument,
                std::string("train: ") + what + " volume dims must be divisible by " + std::to_string(div));
      require(s.volume.dims == set.front().volume.dims, ErrorKind::InvalidArgument,
              "train: whole mode needs uniform volume dims");
    } else {
      for (int a = 0; a < 3; ++a)
        require(s.volume.dims[a] >= cfg.patch_size[a], ErrorKind::InvalidArgument,
                std::string("train: ") + what + " volume smaller than the patch");
    }
  }
}

Dims3 scaled(const Dims3& d, int s) { return {d[0] * s, d[1] * s, d[2] * s}; }

}  // namespace

PatchDraw draw_training_patch(const VolumeGrid& v, const QuerySet& q, const TrainConfig& cfg, Rng& rng) {
  PatchDraw d;
  for (int t = 0; t < cfg.max_patch_draws; ++t) {
    for (int a = 0; a < 3; ++a)
      d.offset[a] = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(v.dims[a] - cfg.patch_size[a] + 1)));
    d.patch = extract_patch(v, d.offset, cfg.patch_size);
    if (!is_background_patch(d.patch)) {
      d.queries = to_patch_frame(q, d.offset, cfg.patch_size, v.frame());
      if (d.queries.size() >= cfg.min_patch_points) return d;
    }
    ++d.rejected;
  }
  fail(ErrorKind::DegenerateInput,
       "train: no foreground patch with enough query points after " + std::to_string(cfg.max_patch_draws) + " draws");
}

const char* to_string(TrainMode m) { return m == TrainMode::Whole ? "whole" : "patch"; }

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "whole") return TrainMode::Whole;
  if (s == "patch") return TrainMode::Patch;
  fail(ErrorKind::Config, "unknown training mode '" + s + "'");
}

void TrainConfig::validate() const {
  model.validate();
  require(epochs >= 0, ErrorKind::Config, "TrainConfig: epochs must be >= 0");
  require(batch_size >= 1 && points >= 1, ErrorKind::Config, "TrainConfig: b and n must be >= 1");
  require(lr > 0 && weight_decay >= 0, ErrorKind::Config, "TrainConfig: bad learning rate or weight decay");
  require(val_every >= 0 && val_points >= 1, ErrorKind::Config, "TrainConfig: bad validation settings");
  if (augment) augment_cfg.validate();
  if (mode == TrainMode::Patch) {
    for (int a = 0; a < 3; ++a)
      require(patch_size[a] > 0 && patch_size[a] % encoder_divisor(model) == 0, ErrorKind::Config,
              "TrainConfig: patch size must be a positive multiple of " + std::to_string(encoder_divisor(model)));
    require(max_patch_draws >= 1, ErrorKind::Config, "TrainConfig: max_patch_draws must be >= 1");
  }
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = to_string(mode);
  j["model"] = nlohmann::ordered_json::parse(model_config_json(model));
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["points"] = points;
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["augment"] = augment;
  j["augment_cfg"] = {{"translation", augment_cfg.translation},
                      {"rotation_deg", {augment_cfg.rotation_deg.x, augment_cfg.rotation_deg.y, augment_cfg.rotation_deg.z}},
                      {"scale_min", augment_cfg.scale_min},
                      {"scale_max", augment_cfg.scale_max}};
  j["seed"] = seed;
  j["patch_size"] = {patch_size[0], patch_size[1], patch_size[2]};
  j["min_patch_points"] = min_patch_points;
  j["max_patch_draws"] = max_patch_draws;
  j["val_every"] = val_every;
  j["val_points"] = val_points;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.contains("mode")) c.mode = train_mode_from_string(j["mode"].get<std::string>());
    if (j.contains("model")) c.model = model_config_from_json(j["model"].dump());
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.points = j.value("points", c.points);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.augment = j.value("augment", c.augment);
    if (j.contains("augment_cfg")) {
      const auto& a = j["augment_cfg"];
      c.augment_cfg.translation = a.value("translation", c.augment_cfg.translation);
      if (a.contains("rotation_deg"))
        c.augment_cfg.rotation_deg = {a["rotation_deg"].at(0).get<double>(), a["rotation_deg"].at(1).get<double>(),
                                      a["rotation_deg"].at(2).get<double>()};
      c.augment_cfg.scale_min = a.value("scale_min", c.augment_cfg.scale_min);
      c.augment_cfg.scale_max = a.value("scale_max", c.augment_cfg.scale_max);
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("patch_size"))
      for (int a = 0; a < 3; ++a) c.patch_size[a] = j["patch_size"].at(a).get<int>();
    c.min_patch_points = j.value("min_patch_points", c.min_patch_points);
    c.max_patch_draws = j.value("max_patch_draws", c.max_patch_draws);
    c.val_every = j.value("val_every", c.val_every);
    c.val_points = j.value("val_points", c.val_points);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("TrainConfig: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainConfig::fingerprint() const { return organocc::fingerprint(to_json()); }

VolumeGrid prepare_input(const VolumeGrid& v) {
  auto [out, st] = normalize(v);
  out.fill = *std::min_element(out.values.begin(), out.values.end());
  return std::move(out);
}

TrainResult train(const std::vector<TrainSample>& train_set, const std::vector<TrainSample>& val_set,
                  const TrainConfig& cfg, const TrainResult* resume) {
  cfg.validate();
  require(!train_set.empty(), ErrorKind::InvalidArgument, "train: empty training set");
  check_samples(train_set, cfg, "training");
  check_samples(val_set, cfg, "validation");
  bool any_foreground = false;
  for (const auto& s : train_set) any_foreground = any_foreground || !is_background_patch(s.volume);
  require(any_foreground, ErrorKind::DegenerateInput, "train: every training volume is background");

  TrainResult r;
  if (resume) {
    require(resume->net.config().fingerprint() == cfg.model.fingerprint(), ErrorKind::Config,
            "train: resume state has a different architecture");
    r.net = clone_network(resume->net);
    r.state = resume->state;
    r.best = clone_network(resume->best);
    r.best_val_loss = resume->best_val_loss;
    r.best_epoch = resume->best_epoch;
    r.trace = resume->trace;
    r.epoch_loss = resume->epoch_loss;
    r.val_loss = resume->val_loss;
  } else {
    r.net = Network<float>(cfg.model, cfg.seed);
    r.state.seed = cfg.seed;
    r.best = clone_network(r.net);
    r.best_val_loss = INFINITY;
  }
  r.state.meta = nlohmann::ordered_json{{"train_fingerprint", cfg.fingerprint()}, {"seed", cfg.seed}}.dump();

  ad::AdamConfig adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;
  const std::size_t n_train = train_set.size();
  const std::int64_t per_epoch =
      static_cast<std::int64_t>((n_train + static_cast<std::size_t>(cfg.batch_size) - 1) / cfg.batch_size);
  const std::int64_t total = per_epoch * cfg.epochs;
  const bool validate_runs = cfg.val_every > 0 && !val_set.empty();

  int cached_epoch = -1;
  std::vector<std::size_t> order;
  double epoch_sum = 0;
  for (std::int64_t s = r.state.step; s < total; ++s) {
    const int epoch = static_cast<int>(s / per_epoch);
    const std::int64_t pos = s % per_epoch;
    if (epoch != cached_epoch) {
      order = epoch_order(cfg.seed, epoch, n_train);
      cached_epoch = epoch;
      epoch_sum = 0;
      for (const auto& rec : r.trace)
        if (rec.epoch == epoch) epoch_sum += rec.loss;
    }
    Rng rng = make_rng(derive_seed(cfg.seed, kStepStream), static_cast<std::uint64_t>(s));
    std::vector<Drawn> items;
    for (int i = 0; i < cfg.batch_size; ++i) {
      const std::size_t idx = order[(static_cast<std::size_t>(pos) * cfg.batch_size + i) % n_train];
      items.push_back(draw_example(train_set[idx], cfg, cfg.augment, cfg.points, rng));
    }

    auto params = r.net.parameters();
    for (auto& p : params) p.zero_grad();
    ad::Tape<float> tape(true);
    LossRecord rec;
    ad::Tensor<float> loss;
    rec.loss = step_loss(r.net, items, true, &rec.per_organ, tape, &loss);
    require(std::isfinite(rec.loss), ErrorKind::Numeric, "train: non-finite loss at step " + std::to_string(s));
    tape.backward(loss);
    ad::adam_step(params, r.state.adam, adam);
    r.state.step = s + 1;
    rec.step = s;
    rec.epoch = epoch;
    r.trace.push_back(rec);
    epoch_sum += rec.loss;

    if (pos == per_epoch - 1) {
      r.epoch_loss.push_back(epoch_sum / static_cast<double>(per_epoch));
      if (validate_runs && (epoch + 1) % cfg.val_every == 0) {
        const double vl = validation_loss(r.net, val_set, cfg);
        require(std::isfinite(vl), ErrorKind::Numeric, "train: non-finite validation loss");
        r.val_loss.push_back(vl);
        if (vl < r.best_val_loss) {
          r.best_val_loss = vl;
          r.best_epoch = epoch;
          r.best = clone_network(r.net);
        }
      }
    }
  }
  if (r.val_loss.empty()) {
    r.best = clone_network(r.net);
    r.best_epoch = cfg.epochs - 1;
    r.best_val_loss = r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back();
  }
  return r;
}

std::string loss_csv(const TrainResult& r) {
  std::ostringstream os;
  os.precision(17);
  os << "step,epoch,loss";
  const std::size_t organs = r.trace.empty() ? 0 : r.trace.front().per_organ.size();
  for (std::size_t k = 0; k < organs; ++k) os << ",organ_" << k;
  os << "\n";
  for (const auto& rec : r.trace) {
    os << rec.step << "," << rec.epoch << "," << rec.loss;
    for (double x : rec.per_organ) os << "," << x;
    os << "\n";
  }
  return os.str();
}

std::vector<Vec3> grid_points(const Dims3& dims) {
  CoordinateFrame f;
  f.dims = dims;
  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(volume_of(dims)));
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i) out.push_back(f.voxel_center_normalized(i, j, k));
  return out;
}

CoordinateFrame refined_frame(const CoordinateFrame& f, const Dims3& dims) {
  CoordinateFrame out;
  out.dims = dims;
  for (int a = 0; a < 3; ++a) {
    out.spacing[a] = f.spacing[a] * f.dims[a] / dims[a];
    out.origin[a] = f.origin[a] - 0.5 * f.spacing[a] + 0.5 * out.spacing[a];
  }
  return out;
}

namespace {

// Probabilities [organs][points] of one encoded input at the given points.
std::vector<std::vector<float>> evaluate_points(Network<float>& net, const FeaturePyramid<float>& pyr,
                                                const std::vector<Vec3>& pts, std::size_t chunk, int threads) {
  const int organs = net.config().organs;
  std::vector<std::vector<float>> out(organs, std::vector<float>(pts.size()));
  const std::size_t chunks = (pts.size() + chunk - 1) / chunk;
  parallel_for(chunks, threads, [&](std::size_t cb, std::size_t ce) {
    for (std::size_t c = cb; c < ce; ++c) {
      const std::size_t b = c * chunk, e = std::min(pts.size(), b + chunk);
      const std::vector<Vec3> slice(pts.begin() + static_cast<std::ptrdiff_t>(b), pts.begin() + static_cast<std::ptrdiff_t>(e));
      ad::Tape<float> tape(false);
      const auto probs = net.probabilities(net.decode(tape, net.query_features(tape, pyr, slice)));
      const std::size_t p = slice.size();
      for (int k = 0; k < organs; ++k)
        for (std::size_t i = 0; i < p; ++i) out[k][b + i] = probs[k * p + i];
    }
  });
  return out;
}

FeaturePyramid<float> encode_eval(Network<float>& net, const VolumeGrid& v) {
  ad::Tape<float> tape(false);
  return net.encode(tape, volume_tensor<float>(v), false);
}

}  // namespace

std::vector<VolumeGrid> infer_dense(Network<float>& net, const VolumeGrid& v, const Dims3& out_dims, std::size_t chunk,
                                    int threads) {
  v.validate();
  require(chunk >= 1, ErrorKind::InvalidArgument, "infer_dense: chunk must be >= 1");
  const int div = encoder_divisor(net.config());
  for (int a = 0; a < 3; ++a) {
    require(v.dims[a] % div == 0, ErrorKind::InvalidArgument,
            "infer_dense: input dims must be divisible by " + std::to_string(div));
    require(out_dims[a] >= 1, ErrorKind::InvalidArgument, "infer_dense: output dims must be positive");
  }
  const auto pyr = encode_eval(net, v);
  const auto probs = evaluate_points(net, pyr, grid_points(out_dims), chunk, threads);
  const CoordinateFrame f = refined_frame(v.frame(), out_dims);
  std::vector<VolumeGrid> out;
  for (const auto& p : probs) {
    VolumeGrid g = VolumeGrid::from_frame(f);
    for (std::size_t i = 0; i < p.size(); ++i) g.values[i] = p[i];
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<double> hann_window(int n, bool flat_low, bool flat_high) {
  require(n >= 2 && n % 2 == 0, ErrorKind::InvalidArgument, "hann_window: length must be even and >= 2");
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) {
    w[i] = 0.5 * (1.0 - std::cos(kTwoPi * i / n));
    if ((flat_low && i < n / 2) || (flat_high && i >= n / 2)) w[i] = 1.0;
  }
  return w;
}

namespace {

// Per-axis windows for every patch origin of a layout.
std::vector<std::vector<double>> axis_windows(const PatchLayout& layout, int axis, int out_scale) {
  const auto offs = layout.axis_offsets(axis);
  std::vector<std::vector<double>> w;
  for (std::size_t i = 0; i < offs.size(); ++i)
    w.push_back(hann_window(layout.patch_size[axis] * out_scale, i == 0, i + 1 == offs.size()));
  return w;
}

std::size_t offset_rank(const std::vector<int>& offs, int o) {
  return static_cast<std::size_t>(std::find(offs.begin(), offs.end(), o) - offs.begin());
}

void check_layout(const Dims3& patch, const Dims3& stride) {
  for (int a = 0; a < 3; ++a)
    require(patch[a] % 2 == 0 && stride[a] * 2 == patch[a], ErrorKind::InvalidArgument,
            "patch blending needs stride = patch/2 on every axis");
}

}  // namespace

VolumeGrid hann_weight_field(const PatchLayout& layout, int out_scale) {
  check_layout(layout.patch_size, layout.stride);
  const Dims3 od = scaled(layout.padded_dims, out_scale);
  VolumeGrid wsum(od, {1, 1, 1}, {0, 0, 0});
  std::vector<std::vector<double>> wx = axis_windows(layout, 0, out_scale), wy = axis_windows(layout, 1, out_scale),
                                   wz = axis_windows(layout, 2, out_scale);
  const auto ox = layout.axis_offsets(0), oy = layout.axis_offsets(1), oz = layout.axis_offsets(2);
  const Dims3 ps = scaled(layout.patch_size, out_scale);
  for (const auto& off : layout.offsets) {
    const auto& a = wx[offset_rank(ox, off[0])];
    const auto& b = wy[offset_rank(oy, off[1])];
    const auto& c = wz[offset_rank(oz, off[2])];
    for (int k = 0; k < ps[2]; ++k)
      for (int j = 0; j < ps[1]; ++j)
        for (int i = 0; i < ps[0]; ++i)
          wsum.at(off[0] * out_scale + i, off[1] * out_scale + j, off[2] * out_scale + k) += a[i] * b[j] * c[k];
  }
  return wsum;
}

std::vector<VolumeGrid> infer_patchwise(Network<float>& net, const VolumeGrid& v, const Dims3& patch_size,
                                        const Dims3& stride, int out_scale, int threads) {
  v.validate();
  check_layout(patch_size, stride);
  require(out_scale >= 1, ErrorKind::InvalidArgument, "infer_patchwise: out_scale must be >= 1");
  const int div = encoder_divisor(net.config());
  for (int a = 0; a < 3; ++a)
    require(patch_size[a] % div == 0, ErrorKind::InvalidArgument,
            "infer_patchwise: patch size must be divisible by " + std::to_string(div));
  const PatchLayout layout = plan_patches(v.dims, patch_size, stride);
  const double fill = v.fill ? *v.fill : *std::min_element(v.values.begin(), v.values.end());
  const VolumeGrid padded = pad_to_dims(v, layout.padded_dims, fill);

  const int organs = net.config().organs;
  const Dims3 od = scaled(layout.padded_dims, out_scale), ps = scaled(patch_size, out_scale);
  const std::size_t out_n = static_cast<std::size_t>(volume_of(od));
  std::vector<std::vector<double>> acc(organs, std::vector<double>(out_n, 0.0));
  std::vector<double> wsum(out_n, 0.0);
  const auto wx = axis_windows(layout, 0, out_scale), wy = axis_windows(layout, 1, out_scale),
             wz = axis_windows(layout, 2, out_scale);
  const auto ox = layout.axis_offsets(0), oy = layout.axis_offsets(1), oz = layout.axis_offsets(2);
  const auto local = grid_points(ps);

  // Patches are evaluated in groups (parallel across the group) and then
  // accumulated in layout order, so the result does not depend on threads.
  const std::size_t group = static_cast<std::size_t>(std::max(threads, 1));
  for (std::size_t g0 = 0; g0 < layout.offsets.size(); g0 += group) {
    const std::size_t g1 = std::min(layout.offsets.size(), g0 + group);
    std::vector<std::vector<std::vector<float>>> probs(g1 - g0);
    parallel_for(g1 - g0, threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t p = b; p < e; ++p) {
        const auto patch = extract_patch(padded, layout.offsets[g0 + p], patch_size);
        probs[p] = evaluate_points(net, encode_eval(net, patch), local, 32768, 1);
      }
    });
    for (std::size_t p = g0; p < g1; ++p) {
      const Dims3 off = layout.offsets[p];
      const auto& a = wx[offset_rank(ox, off[0])];
      const auto& b = wy[offset_rank(oy, off[1])];
      const auto& c = wz[offset_rank(oz, off[2])];
      std::size_t li = 0;
      for (int k = 0; k < ps[2]; ++k)
        for (int j = 0; j < ps[1]; ++j)
          for (int i = 0; i < ps[0]; ++i, ++li) {
            const std::size_t gi =
                (static_cast<std::size_t>(off[2] * out_scale + k) * od[1] + (off[1] * out_scale + j)) * od[0] +
                (off[0] * out_scale + i);
            const double w = a[i] * b[j] * c[k];
            for (int o = 0; o < organs; ++o) acc[o][gi] += static_cast<double>(probs[p - g0][o][li]) * w;
            wsum[gi] += w;
          }
    }
  }

  const Dims3 final_dims = scaled(v.dims, out_scale);
  const CoordinateFrame f = refined_frame(v.frame(), final_dims);
  std::vector<VolumeGrid> out;
  for (int o = 0; o < organs; ++o) {
    VolumeGrid g = VolumeGrid::from_frame(f);
    for (int k = 0; k < final_dims[2]; ++k)
      for (int j = 0; j < final_dims[1]; ++j)
        for (int i = 0; i < final_dims[0]; ++i) {
          const std::size_t gi = (static_cast<std::size_t>(k) * od[1] + j) * od[0] + i;
          require(wsum[gi] > 0, ErrorKind::Layout, "infer_patchwise: zero blending weight at a covered voxel");
          g.at(i, j, k) = acc[o][gi] / wsum[gi];
        }
    out.push_back(std::move(g));
  }
  return out;
}

TriMesh reconstruct(const VolumeGrid& occ, const ReconstructOptions& opt) {
  occ.validate();
  for (double x : occ.values)
    require(x >= 0 && x <= 1, ErrorKind::InvalidArgument, "reconstruct: occupancy outside [0,1]");
  const Dims3 d{occ.dims[0] + 2, occ.dims[1] + 2, occ.dims[2] + 2};
  VolumeGrid padded(d, occ.spacing, occ.origin - occ.spacing, 0.0);
  for (int k = 0; k < occ.dims[2]; ++k)
    for (int j = 0; j < occ.dims[1]; ++j)
      for (int i = 0; i < occ.dims[0]; ++i) padded.at(i + 1, j + 1, k + 1) = occ.at(i, j, k);
  TriMesh m = marching_cubes(padded, opt.iso);
  if (m.empty() || opt.smooth_iterations <= 0) return m;
  return smooth_mesh(m, opt.smooth_iterations, opt.smooth_lambda);
}

VolumeGrid nearest_upsample_mask(const VolumeGrid& occ, const Dims3& out_dims) {
  occ.validate();
  const CoordinateFrame f = refined_frame(occ.frame(), out_dims);
  VolumeGrid out = VolumeGrid::from_frame(f);
  for (int k = 0; k < out_dims[2]; ++k)
    for (int j = 0; j < out_dims[1]; ++j)
      for (int i = 0; i < out_dims[0]; ++i) {
        const Vec3 q = f.voxel_center_normalized(i, j, k);
        int src[3];
        for (int a = 0; a < 3; ++a)
          src[a] = std::clamp(static_cast<int>(std::floor((q[a] + 1) * 0.5 * occ.dims[a])), 0, occ.dims[a] - 1);
        out.at(i, j, k) = occ.at(src[0], src[1], src[2]) >= 0.5 ? 1.0 : 0.0;
      }
  return out;
}

}  // namespace organocc
