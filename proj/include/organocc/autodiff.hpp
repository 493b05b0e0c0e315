#pragma once

// Minimal reverse-mode engine with exactly the operators the model needs.
// Instantiated for float (training) and double (gradient checks).

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "organocc/vec3.hpp"

namespace organocc::ad {

using Shape = std::vector<int>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
};

// Shared handle; copies alias the same storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, T v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  std::size_t numel() const { return d_->value.size(); }

  T* data() { return d_->value.data(); }
  const T* data() const { return d_->value.data(); }
  std::vector<T>& values() { return d_->value; }
  const std::vector<T>& values() const { return d_->value; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool r) { d_->requires_grad = r; }

  bool has_grad() const { return !d_->grad.empty(); }
  // Allocates a zero gradient on first use.
  std::vector<T>& grad() const;
  const std::vector<T>& grad_or_empty() const { return d_->grad; }
  void zero_grad() { d_->grad.clear(); }

  T item() const;

  bool same(const Tensor& o) const { return d_ == o.d_; }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

// Records backward closures in execution order. A non-recording tape runs
// ops forward only. backward() may run once per recording.
template <typename T>
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }
  bool wants(const Tensor<T>& out) const { return record_ && out.requires_grad(); }
  void push(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)=1 and runs closures in reverse. Throws InvalidArgument for
  // non-scalar losses and on a second call without reset().
  void backward(const Tensor<T>& loss);
  void reset();

 private:
  bool record_;
  bool done_ = false;
  std::vector<std::function<void()>> nodes_;
};

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(int channels = 0)
      : running_mean(static_cast<std::size_t>(channels), 0.0), running_var(static_cast<std::size_t>(channels), 1.0) {}
};

enum class Activation { None, Relu };

// 3x3x3 cross-correlation, zero padding 1, stride 1.
// x [N,C,D,H,W], w [K,C,3,3,3], b [K] -> [N,K,D,H,W].
template <typename T>
Tensor<T> conv3d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// Train mode normalizes with batch statistics over N and spatial dims and
// updates the running stats (unbiased variance); eval uses running stats.
template <typename T>
Tensor<T> batchnorm3d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState& state, bool train);

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x);

// 2x2x2 window, stride 2. Ties go to the lowest flat index in the window.
template <typename T>
Tensor<T> maxpool3d(Tape<T>& tape, const Tensor<T>& x);

// x [N,F,P], w [G,F], b [G] -> [N,G,P].
template <typename T>
Tensor<T> pointwise_layer(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                          Activation act);

// grid [N,C,D,H,W] sampled at `points` (N*P normalized coordinates, batch
// major, x indexes W) -> [N,C,P]. Clamp-to-edge, voxel-center convention.
// Coordinates within 1e-9 voxels of a voxel center snap to it, so center
// queries return stored values bitwise.
template <typename T>
Tensor<T> trilinear_sample(Tape<T>& tape, const Tensor<T>& grid, const std::vector<Vec3>& points);

// Concatenate [N,Ci,P] tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const std::vector<Tensor<T>>& parts);

// Channel c of [N,C,P] as [N,1,P].
template <typename T>
Tensor<T> select_channel(Tape<T>& tape, const Tensor<T>& x, int c);

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T s);

// Sum of all elements as a scalar.
template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a);

// Mean binary cross entropy over all elements, log-sum-exp stable form.
template <typename T>
Tensor<T> bce_with_logits(Tape<T>& tape, const Tensor<T>& logits, const std::vector<T>& targets);

// logits [N,C,P], targets N*P class ids -> mean softmax cross entropy.
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, const std::vector<int>& targets);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t step = 0;
};

// One bias-corrected Adam update. weight_decay adds wd * param to the
// gradient. Parameters without a gradient are treated as having grad 0.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, const AdamConfig& cfg);

}  // namespace organocc::ad
