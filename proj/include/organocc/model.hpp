#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "organocc/autodiff.hpp"
#include "organocc/volume.hpp"

namespace organocc {

enum class DecoderVariant { Single, Multi };

const char* to_string(DecoderVariant v);
DecoderVariant decoder_variant_from_string(const std::string& s);

struct ModelConfig {
  int base_channels = 8;
  int blocks = 5;
  bool raw_input_scale = true;
  DecoderVariant variant = DecoderVariant::Multi;
  int hidden_dim = 512;
  int organs = 1;

  void validate() const;
  // Channels of encoder block k (0-based).
  int block_channels(int k) const { return base_channels << k; }
  // Per-point feature width fed to the decoder.
  int feature_dim() const;
  int output_channels() const { return variant == DecoderVariant::Single ? organs + 1 : organs; }
  // Canonical JSON of the architecture; its hash is the fingerprint.
  std::string canonical_json() const;
  std::string fingerprint() const;
};

// Per-scale feature grids [N,C,D,H,W], finest first (raw input first when enabled).
template <typename T>
struct FeaturePyramid {
  std::vector<ad::Tensor<T>> scales;
};

template <typename T>
struct ConvBnUnit {
  ad::Tensor<T> weight, bias, gamma, beta;
  ad::BatchNormState bn;
};

template <typename T>
struct DecoderParams {
  ad::Tensor<T> w1, b1, w2, b2, w3, b3;
};

// Encoder + decoder(s). Labels are point-major: labels[(n*P + p)*organs + k].
template <typename T>
class Network {
 public:
  Network() = default;
  Network(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  // Trainable tensors in a fixed order, with stable names.
  std::vector<ad::Tensor<T>> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::vector<ConvBnUnit<T>>& units() { return units_; }
  const std::vector<ConvBnUnit<T>>& units() const { return units_; }
  std::vector<DecoderParams<T>>& decoders() { return decoders_; }

  // volume [N,1,D,H,W], every spatial dim divisible by 2^(blocks-1).
  FeaturePyramid<T> encode(ad::Tape<T>& tape, const ad::Tensor<T>& volume, bool train);
  // points: N*P normalized coordinates -> [N,F,P].
  ad::Tensor<T> query_features(ad::Tape<T>& tape, const FeaturePyramid<T>& pyr, const std::vector<Vec3>& points) const;
  // [N,F,P] -> logits [N,output_channels,P].
  ad::Tensor<T> decode(ad::Tape<T>& tape, const ad::Tensor<T>& features) const;
  // Summed per-organ BCE (multi) or cross entropy over organ classes (single).
  // `per_organ`, when given, receives each organ's BCE (multi only).
  ad::Tensor<T> loss(ad::Tape<T>& tape, const ad::Tensor<T>& logits, const std::vector<std::uint8_t>& labels,
                     std::vector<double>* per_organ = nullptr) const;

  // Per-organ occupancy probabilities [N,organs,P]: sigmoid (multi) or the
  // softmax mass of class k+1 (single).
  std::vector<T> probabilities(const ad::Tensor<T>& logits) const;

  // Eval-mode forward: encode, query, decode, probabilities.
  std::vector<T> forward(const ad::Tensor<T>& volume, const std::vector<Vec3>& points);

 private:
  ModelConfig cfg_;
  std::vector<ConvBnUnit<T>> units_;  // 2 per block
  std::vector<DecoderParams<T>> decoders_;
};

// [1,1,nz,ny,nx] tensor holding the grid values.
template <typename T>
ad::Tensor<T> volume_tensor(const VolumeGrid& v);

// Class ids for the single-decoder variant; throws LabelConflict when a point
// is inside two organs.
std::vector<int> class_ids_from_labels(const std::vector<std::uint8_t>& labels, int organs);

struct TrainingState {
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  ad::AdamState<float> adam;
  // Free-form JSON object stored under "meta" (experiment fingerprint, etc).
  std::string meta = "{}";
};

// Deep copy of parameters and batch-norm statistics (Network copies share tensors).
Network<float> clone_network(const Network<float>& net);

// JSON manifest at `path` plus `path + ".bin"`: parameters (f32), Adam
// moments (f32) and batch-norm running stats (f64), in manifest order.
void save_checkpoint(const Network<float>& net, const TrainingState& st, const std::string& path);
// Throws Config when `expected` is given and its fingerprint differs.
void load_checkpoint(const std::string& path, Network<float>& net, TrainingState& st,
                     const ModelConfig* expected = nullptr);
ModelConfig read_checkpoint_config(const std::string& path);

std::string model_config_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace organocc
