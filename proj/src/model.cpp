#include "organocc/model.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>

#include "organocc/error.hpp"
#include "organocc/io.hpp"
#include "organocc/rng.hpp"
#include "json.hpp"

namespace organocc {

using ad::Tape;
using ad::Tensor;

const char* to_string(DecoderVariant v) { return v == DecoderVariant::Single ? "single" : "multi"; }

DecoderVariant decoder_variant_from_string(const std::string& s) {
  if (s == "single") return DecoderVariant::Single;
  if (s == "multi") return DecoderVariant::Multi;
  fail(ErrorKind::Config, "unknown decoder variant '" + s + "'");
}

void ModelConfig::validate() const {
  require(base_channels >= 1, ErrorKind::Config, "base_channels must be positive");
  require(blocks == 5, ErrorKind::Config, "the encoder has exactly 5 blocks");
  require(hidden_dim >= 1, ErrorKind::Config, "hidden_dim must be positive");
  require(organs >= 1, ErrorKind::Config, "organs must be positive");
}

int ModelConfig::feature_dim() const {
  int f = raw_input_scale ? 1 : 0;
  for (int k = 0; k < blocks; ++k) f += block_channels(k);
  return f;
}

std::string model_config_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["base_channels"] = c.base_channels;
  j["blocks"] = c.blocks;
  j["raw_input_scale"] = c.raw_input_scale;
  j["variant"] = to_string(c.variant);
  j["hidden_dim"] = c.hidden_dim;
  j["organs"] = c.organs;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.base_channels = j.value("base_channels", c.base_channels);
    c.blocks = j.value("blocks", c.blocks);
    c.raw_input_scale = j.value("raw_input_scale", c.raw_input_scale);
    c.variant = decoder_variant_from_string(j.value("variant", std::string(to_string(c.variant))));
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.organs = j.value("organs", c.organs);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("bad model config: ") + e.what());
  }
}

std::string ModelConfig::canonical_json() const { return model_config_json(*this); }
std::string ModelConfig::fingerprint() const { return organocc::fingerprint(canonical_json()); }

namespace {

template <typename T>
Tensor<T> he_normal(ad::Shape shape, int fan_in, Rng& rng) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape), true);
  const double sd = std::sqrt(2.0 / fan_in);
  for (auto& v : t.values()) v = static_cast<T>(sd * standard_normal(rng));
  return t;
}

template <typename T>
DecoderParams<T> make_decoder(int F, int Hd, int out, Rng& rng) {
  DecoderParams<T> d;
  d.w1 = he_normal<T>({Hd, F}, F, rng);
  d.b1 = Tensor<T>::zeros({Hd}, true);
  d.w2 = he_normal<T>({Hd, Hd}, Hd, rng);
  d.b2 = Tensor<T>::zeros({Hd}, true);
  d.w3 = Tensor<T>::zeros({out, Hd}, true);
  const double sd = std::sqrt(1.0 / Hd);
  for (auto& v : d.w3.values()) v = static_cast<T>(sd * standard_normal(rng));
  d.b3 = Tensor<T>::zeros({out}, true);
  return d;
}

}  // namespace

template <typename T>
Network<T>::Network(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = make_rng(seed, 0x6d6f64656cULL);
  int cin = 1;
  for (int k = 0; k < cfg_.blocks; ++k) {
    const int c = cfg_.block_channels(k);
    for (int r = 0; r < 2; ++r) {
      ConvBnUnit<T> u;
      const int in = r == 0 ? cin : c;
      u.weight = he_normal<T>({c, in, 3, 3, 3}, in * 27, rng);
      u.bias = Tensor<T>::zeros({c}, true);
      u.gamma = Tensor<T>::filled({c}, T(1), true);
      u.beta = Tensor<T>::zeros({c}, true);
      u.bn = ad::BatchNormState(c);
      units_.push_back(std::move(u));
    }
    cin = c;
  }
  const int F = cfg_.feature_dim();
  if (cfg_.variant == DecoderVariant::Single) {
    decoders_.push_back(make_decoder<T>(F, cfg_.hidden_dim, cfg_.organs + 1, rng));
  } else {
    for (int k = 0; k < cfg_.organs; ++k) decoders_.push_back(make_decoder<T>(F, cfg_.hidden_dim, 1, rng));
  }
}

template <typename T>
std::vector<Tensor<T>> Network<T>::parameters() const {
  std::vector<Tensor<T>> p;
  for (const auto& u : units_) {
    p.push_back(u.weight);
    p.push_back(u.bias);
    p.push_back(u.gamma);
    p.push_back(u.beta);
  }
  for (const auto& d : decoders_) {
    for (const auto* t : {&d.w1, &d.b1, &d.w2, &d.b2, &d.w3, &d.b3}) p.push_back(*t);
  }
  return p;
}

template <typename T>
std::vector<std::string> Network<T>::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < units_.size(); ++i) {
    const std::string base = "encoder.block" + std::to_string(i / 2) + ".conv" + std::to_string(i % 2);
    for (const char* s : {".weight", ".bias", ".bn.gamma", ".bn.beta"}) names.push_back(base + s);
  }
  for (std::size_t k = 0; k < decoders_.size(); ++k) {
    const std::string base = "decoder" + std::to_string(k);
    for (const char* s : {".fc1.weight", ".fc1.bias", ".fc2.weight", ".fc2.bias", ".fc3.weight", ".fc3.bias"})
      names.push_back(base + s);
  }
  return names;
}

template <typename T>
FeaturePyramid<T> Network<T>::encode(Tape<T>& tape, const Tensor<T>& volume, bool train) {
  require(volume.rank() == 5 && volume.dim(1) == 1, ErrorKind::InvalidArgument,
          "encode expects a [N,1,D,H,W] volume, got " + ad::shape_str(volume.shape()));
  const int div = 1 << (cfg_.blocks - 1);
  for (int a = 2; a < 5; ++a) {
    require(volume.dim(a) % div == 0, ErrorKind::InvalidArgument,
            "encoder input dims must be divisible by " + std::to_string(div) + ", got " + ad::shape_str(volume.shape()));
  }
  FeaturePyramid<T> pyr;
  if (cfg_.raw_input_scale) pyr.scales.push_back(volume);
  Tensor<T> h = volume;
  for (int k = 0; k < cfg_.blocks; ++k) {
    if (k > 0) h = ad::maxpool3d(tape, h);
    for (int r = 0; r < 2; ++r) {
      auto& u = units_[static_cast<std::size_t>(2 * k + r)];
      h = ad::conv3d(tape, h, u.weight, u.bias);
      h = ad::batchnorm3d(tape, h, u.gamma, u.beta, u.bn, train);
      h = ad::relu(tape, h);
    }
    pyr.scales.push_back(h);
  }
  return pyr;
}

template <typename T>
Tensor<T> Network<T>::query_features(Tape<T>& tape, const FeaturePyramid<T>& pyr,
                                     const std::vector<Vec3>& points) const {
  std::vector<Tensor<T>> parts;
  parts.reserve(pyr.scales.size());
  for (const auto& s : pyr.scales) parts.push_back(ad::trilinear_sample(tape, s, points));
  return ad::concat_channels(tape, parts);
}

template <typename T>
Tensor<T> Network<T>::decode(Tape<T>& tape, const Tensor<T>& features) const {
  require(features.rank() == 3 && features.dim(1) == cfg_.feature_dim(), ErrorKind::InvalidArgument,
          "decoder expects " + std::to_string(cfg_.feature_dim()) + " features, got " + ad::shape_str(features.shape()));
  std::vector<Tensor<T>> outs;
  for (const auto& d : decoders_) {
    auto h = ad::pointwise_layer(tape, features, d.w1, d.b1, ad::Activation::Relu);
    h = ad::pointwise_layer(tape, h, d.w2, d.b2, ad::Activation::Relu);
    outs.push_back(ad::pointwise_layer(tape, h, d.w3, d.b3, ad::Activation::None));
  }
  return outs.size() == 1 ? outs[0] : ad::concat_channels(tape, outs);
}

std::vector<int> class_ids_from_labels(const std::vector<std::uint8_t>& labels, int organs) {
  require(organs >= 1 && labels.size() % static_cast<std::size_t>(organs) == 0, ErrorKind::InvalidArgument,
          "label count is not a multiple of the organ count");
  std::vector<int> ids(labels.size() / organs, 0);
  for (std::size_t p = 0; p < ids.size(); ++p) {
    for (int k = 0; k < organs; ++k) {
      if (!labels[p * organs + k]) continue;
      require(ids[p] == 0, ErrorKind::LabelConflict,
              "point " + std::to_string(p) + " is inside two organs; the single-decoder variant cannot represent it");
      ids[p] = k + 1;
    }
  }
  return ids;
}

template <typename T>
Tensor<T> Network<T>::loss(Tape<T>& tape, const Tensor<T>& logits, const std::vector<std::uint8_t>& labels,
                           std::vector<double>* per_organ) const {
  const int N = logits.dim(0), P = logits.dim(2), c = cfg_.organs;
  const std::size_t NP = static_cast<std::size_t>(N) * P;
  require(logits.dim(1) == cfg_.output_channels(), ErrorKind::InvalidArgument, "logit channel count mismatch");
  require(labels.size() == NP * c, ErrorKind::InvalidArgument, "label count does not match logits");
  if (cfg_.variant == DecoderVariant::Single) {
    if (per_organ) per_organ->clear();
    return ad::cross_entropy(tape, logits, class_ids_from_labels(labels, c));
  }
  Tensor<T> total;
  if (per_organ) per_organ->assign(static_cast<std::size_t>(c), 0.0);
  for (int k = 0; k < c; ++k) {
    std::vector<T> target(NP);
    for (std::size_t i = 0; i < NP; ++i) target[i] = labels[i * c + k] ? T(1) : T(0);
    auto lk = ad::bce_with_logits(tape, c == 1 ? logits : ad::select_channel(tape, logits, k), target);
    if (per_organ) (*per_organ)[k] = lk.item();
    total = k == 0 ? lk : ad::add(tape, total, lk);
  }
  return total;
}

template <typename T>
std::vector<T> Network<T>::probabilities(const Tensor<T>& logits) const {
  const int N = logits.dim(0), C = logits.dim(1), P = logits.dim(2), c = cfg_.organs;
  std::vector<T> out(static_cast<std::size_t>(N) * c * P);
  for (int n = 0; n < N; ++n)
    for (int p = 0; p < P; ++p) {
      auto at = [&](int ch) { return logits.data()[(static_cast<std::size_t>(n) * C + ch) * P + p]; };
      if (cfg_.variant == DecoderVariant::Multi) {
        for (int k = 0; k < c; ++k) {
          const double x = at(k);
          out[(static_cast<std::size_t>(n) * c + k) * P + p] =
              static_cast<T>(x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)));
        }
      } else {
        double mx = at(0);
        for (int ch = 1; ch < C; ++ch) mx = std::max(mx, static_cast<double>(at(ch)));
        double se = 0;
        for (int ch = 0; ch < C; ++ch) se += std::exp(at(ch) - mx);
        for (int k = 0; k < c; ++k)
          out[(static_cast<std::size_t>(n) * c + k) * P + p] = static_cast<T>(std::exp(at(k + 1) - mx) / se);
      }
    }
  return out;
}

template <typename T>
std::vector<T> Network<T>::forward(const Tensor<T>& volume, const std::vector<Vec3>& points) {
  Tape<T> tape(false);
  auto pyr = encode(tape, volume, false);
  return probabilities(decode(tape, query_features(tape, pyr, points)));
}

template <typename T>
Tensor<T> volume_tensor(const VolumeGrid& v) {
  v.validate();
  std::vector<T> vals(v.values.begin(), v.values.end());
  return Tensor<T>({1, 1, v.dims[2], v.dims[1], v.dims[0]}, std::move(vals));
}

template class Network<float>;
template class Network<double>;
template Tensor<float> volume_tensor<float>(const VolumeGrid&);
template Tensor<double> volume_tensor<double>(const VolumeGrid&);

// Checkpoints ----------------------------------------------------------------

namespace {

struct Entry {
  std::string name;
  ad::Shape shape;
  std::string dtype;
};

std::vector<Entry> manifest_entries(const Network<float>& net) {
  std::vector<Entry> e;
  const auto params = net.parameters();
  const auto names = net.parameter_names();
  for (std::size_t i = 0; i < params.size(); ++i) e.push_back({names[i], params[i].shape(), "f32"});
  for (std::size_t i = 0; i < params.size(); ++i) e.push_back({"adam.m." + names[i], params[i].shape(), "f32"});
  for (std::size_t i = 0; i < params.size(); ++i) e.push_back({"adam.v." + names[i], params[i].shape(), "f32"});
  for (std::size_t u = 0; u < net.units().size(); ++u) {
    const std::string base = "encoder.block" + std::to_string(u / 2) + ".conv" + std::to_string(u % 2) + ".bn";
    const int c = static_cast<int>(net.units()[u].bn.running_mean.size());
    e.push_back({base + ".running_mean", {c}, "f64"});
    e.push_back({base + ".running_var", {c}, "f64"});
  }
  return e;
}

template <typename S>
void put(std::vector<std::uint8_t>& out, const S* data, std::size_t n) {
  const auto* b = reinterpret_cast<const std::uint8_t*>(data);
  out.insert(out.end(), b, b + n * sizeof(S));
}

template <typename S>
void take(const std::vector<std::uint8_t>& in, std::size_t& off, S* data, std::size_t n) {
  require(off + n * sizeof(S) <= in.size(), ErrorKind::Io, "checkpoint payload truncated");
  std::memcpy(data, in.data() + off, n * sizeof(S));
  off += n * sizeof(S);
}

std::string payload_name(const std::string& path) { return std::filesystem::path(path).filename().string() + ".bin"; }

}  // namespace

void save_checkpoint(const Network<float>& net, const TrainingState& st, const std::string& path) {
  const auto entries = manifest_entries(net);
  nlohmann::ordered_json j;
  j["format"] = "organocc-checkpoint-1";
  j["fingerprint"] = net.config().fingerprint();
  j["config"] = nlohmann::ordered_json::parse(net.config().canonical_json());
  j["seed"] = st.seed;
  j["step"] = st.step;
  j["payload"] = payload_name(path);
  j["meta"] = nlohmann::ordered_json::parse(st.meta);
  auto& arr = j["tensors"] = nlohmann::ordered_json::array();
  for (const auto& e : entries) arr.push_back({{"name", e.name}, {"shape", e.shape}, {"dtype", e.dtype}});
  write_text(path, j.dump(1) + "\n");

  std::vector<std::uint8_t> bytes;
  const auto params = net.parameters();
  for (const auto& p : params) put(bytes, p.data(), p.numel());
  for (int pass = 0; pass < 2; ++pass) {
    const auto& moments = pass == 0 ? st.adam.m : st.adam.v;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (moments.empty()) {
        std::vector<float> z(params[i].numel(), 0.0f);
        put(bytes, z.data(), z.size());
      } else {
        put(bytes, moments[i].data(), moments[i].size());
      }
    }
  }
  for (const auto& u : net.units()) {
    put(bytes, u.bn.running_mean.data(), u.bn.running_mean.size());
    put(bytes, u.bn.running_var.data(), u.bn.running_var.size());
  }
  write_bytes((std::filesystem::path(path).parent_path() / payload_name(path)).string(), bytes);
}

ModelConfig read_checkpoint_config(const std::string& path) {
  try {
    const auto j = nlohmann::json::parse(read_text(path));
    return model_config_from_json(j.at("config").dump());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, "bad checkpoint manifest " + path + ": " + e.what());
  }
}

void load_checkpoint(const std::string& path, Network<float>& net, TrainingState& st, const ModelConfig* expected) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, "bad checkpoint manifest " + path + ": " + e.what());
  }
  const ModelConfig cfg = model_config_from_json(j.at("config").dump());
  const std::string fp = j.value("fingerprint", "");
  require(fp == cfg.fingerprint(), ErrorKind::Config, "checkpoint fingerprint does not match its config");
  if (expected) {
    require(expected->fingerprint() == fp, ErrorKind::Config,
            "checkpoint architecture " + cfg.canonical_json() + " does not match requested " + expected->canonical_json());
  }
  Network<float> loaded(cfg, 0);
  const auto entries = manifest_entries(loaded);
  const auto& tensors = j.at("tensors");
  require(tensors.size() == entries.size(), ErrorKind::Config, "checkpoint tensor list does not match architecture");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    require(tensors[i].at("name") == entries[i].name && tensors[i].at("shape").get<ad::Shape>() == entries[i].shape,
            ErrorKind::Config, "checkpoint tensor " + entries[i].name + " does not match architecture");
  }
  const auto bytes = read_bytes((std::filesystem::path(path).parent_path() / j.at("payload").get<std::string>()).string());
  std::size_t off = 0;
  auto params = loaded.parameters();
  for (auto& p : params) take(bytes, off, p.data(), p.numel());
  TrainingState s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.step = j.at("step").get<std::int64_t>();
  s.adam.step = s.step;
  if (j.contains("meta")) s.meta = j.at("meta").dump();
  for (int pass = 0; pass < 2; ++pass) {
    auto& moments = pass == 0 ? s.adam.m : s.adam.v;
    for (auto& p : params) {
      moments.emplace_back(p.numel());
      take(bytes, off, moments.back().data(), p.numel());
    }
  }
  for (auto& u : loaded.units()) {
    take(bytes, off, u.bn.running_mean.data(), u.bn.running_mean.size());
    take(bytes, off, u.bn.running_var.data(), u.bn.running_var.size());
  }
  require(off == bytes.size(), ErrorKind::Io, "checkpoint payload has trailing bytes");
  if (s.step == 0) {
    s.adam.m.clear();
    s.adam.v.clear();
  }
  net = std::move(loaded);
  st = std::move(s);
}

Network<float> clone_network(const Network<float>& net) {
  Network<float> out(net.config(), 0);
  const auto src = net.parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) std::copy(src[i].data(), src[i].data() + src[i].numel(), dst[i].data());
  for (std::size_t u = 0; u < net.units().size(); ++u) out.units()[u].bn = net.units()[u].bn;
  return out;
}

}  // namespace organocc
