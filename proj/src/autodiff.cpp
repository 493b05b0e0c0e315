#include "organocc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "organocc/error.hpp"
#include "organocc/simd/kernels.hpp"

namespace organocc::ad {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    require(d >= 0, ErrorKind::InvalidArgument, "negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream o;
  o << '[';
  for (std::size_t i = 0; i < s.size(); ++i) o << (i ? "," : "") << s[i];
  o << ']';
  return o.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) : d_(std::make_shared<TensorData<T>>()) {
  require(values.size() == ad::numel(shape), ErrorKind::InvalidArgument,
          "tensor values do not match shape " + shape_str(shape));
  d_->shape = std::move(shape);
  d_->value = std::move(values);
  d_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::filled(Shape shape, T v, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
}

template <typename T>
std::vector<T>& Tensor<T>::grad() const {
  if (d_->grad.empty()) d_->grad.assign(d_->value.size(), T(0));
  return d_->grad;
}

template <typename T>
T Tensor<T>::item() const {
  require(numel() == 1, ErrorKind::InvalidArgument, "item() on a non-scalar tensor");
  return d_->value[0];
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  require(loss.defined() && loss.numel() == 1, ErrorKind::InvalidArgument, "backward needs a scalar loss");
  require(!done_, ErrorKind::InvalidArgument, "backward already ran on this tape; reset() first");
  done_ = true;
  Tensor<T> l = loss;
  if (!l.requires_grad()) return;
  l.grad()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

template <typename T>
void Tape<T>::reset() {
  nodes_.clear();
  done_ = false;
}

namespace {

void check_rank(const Shape& s, std::size_t r, const char* what) {
  require(s.size() == r, ErrorKind::InvalidArgument, std::string(what) + ": expected rank " + std::to_string(r) +
                                                         ", got " + shape_str(s));
}

template <typename T>
Tensor<T> result(Shape shape, std::initializer_list<const Tensor<T>*> inputs, const Tape<T>& tape) {
  bool rg = false;
  for (auto* t : inputs) rg = rg || t->requires_grad();
  return Tensor<T>::zeros(std::move(shape), rg && tape.recording());
}

// im2col for a slab of output depth slices [d0, d1) of one batch item.
// cols is (C*27) x S where S = (d1-d0)*H*W.
template <typename T>
void im2col(const T* x, int C, int D, int H, int W, int d0, int d1, T* cols) {
  const std::size_t S = static_cast<std::size_t>(d1 - d0) * H * W;
  for (int c = 0; c < C; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * D * H * W;
    for (int kd = 0; kd < 3; ++kd)
      for (int kh = 0; kh < 3; ++kh)
        for (int kw = 0; kw < 3; ++kw) {
          T* row = cols + (static_cast<std::size_t>(c) * 27 + (kd * 3 + kh) * 3 + kw) * S;
          for (int d = d0; d < d1; ++d) {
            const int sd = d + kd - 1;
            for (int h = 0; h < H; ++h) {
              T* out = row + (static_cast<std::size_t>(d - d0) * H + h) * W;
              const int sh = h + kh - 1;
              if (sd < 0 || sd >= D || sh < 0 || sh >= H) {
                std::fill(out, out + W, T(0));
                continue;
              }
              const T* src = xc + (static_cast<std::size_t>(sd) * H + sh) * W;
              const int shift = kw - 1;
              for (int w = 0; w < W; ++w) {
                const int sw = w + shift;
                out[w] = (sw >= 0 && sw < W) ? src[sw] : T(0);
              }
            }
          }
        }
  }
}

template <typename T>
void col2im_add(const T* cols, int C, int D, int H, int W, int d0, int d1, T* dx) {
  const std::size_t S = static_cast<std::size_t>(d1 - d0) * H * W;
  for (int c = 0; c < C; ++c) {
    T* xc = dx + static_cast<std::size_t>(c) * D * H * W;
    for (int kd = 0; kd < 3; ++kd)
      for (int kh = 0; kh < 3; ++kh)
        for (int kw = 0; kw < 3; ++kw) {
          const T* row = cols + (static_cast<std::size_t>(c) * 27 + (kd * 3 + kh) * 3 + kw) * S;
          for (int d = d0; d < d1; ++d) {
            const int sd = d + kd - 1;
            if (sd < 0 || sd >= D) continue;
            for (int h = 0; h < H; ++h) {
              const int sh = h + kh - 1;
              if (sh < 0 || sh >= H) continue;
              const T* in = row + (static_cast<std::size_t>(d - d0) * H + h) * W;
              T* dst = xc + (static_cast<std::size_t>(sd) * H + sh) * W;
              const int shift = kw - 1;
              for (int w = 0; w < W; ++w) {
                const int sw = w + shift;
                if (sw >= 0 && sw < W) dst[sw] += in[w];
              }
            }
          }
        }
  }
}

// Depth slices per im2col slab; bounds the column buffer to ~4M elements.
int slab_depth(int C, int D, int H, int W) {
  const std::size_t per_slice = static_cast<std::size_t>(C) * 27 * H * W;
  const std::size_t budget = std::size_t(1) << 22;
  return std::clamp(static_cast<int>(budget / std::max<std::size_t>(per_slice, 1)), 1, D);
}

}  // namespace

template <typename T>
Tensor<T> conv3d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  check_rank(x.shape(), 5, "conv3d input");
  check_rank(w.shape(), 5, "conv3d weight");
  check_rank(b.shape(), 1, "conv3d bias");
  const int N = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const int K = w.dim(0);
  require(w.dim(1) == C && w.dim(2) == 3 && w.dim(3) == 3 && w.dim(4) == 3, ErrorKind::InvalidArgument,
          "conv3d weight " + shape_str(w.shape()) + " does not match input " + shape_str(x.shape()));
  require(b.dim(0) == K, ErrorKind::InvalidArgument, "conv3d bias size mismatch");
  require(D >= 1 && H >= 1 && W >= 1, ErrorKind::InvalidArgument, "conv3d needs non-empty spatial dims");

  Tensor<T> y = result<T>({N, K, D, H, W}, {&x, &w, &b}, tape);
  const std::size_t S = static_cast<std::size_t>(D) * H * W;
  const int CK = C * 27;
  const int slab = slab_depth(C, D, H, W);
  std::vector<T> cols(static_cast<std::size_t>(CK) * slab * H * W);

  for (int n = 0; n < N; ++n) {
    const T* xn = x.data() + static_cast<std::size_t>(n) * C * S;
    T* yn = y.data() + static_cast<std::size_t>(n) * K * S;
    for (int d0 = 0; d0 < D; d0 += slab) {
      const int d1 = std::min(D, d0 + slab);
      const int Sc = (d1 - d0) * H * W;
      im2col(xn, C, D, H, W, d0, d1, cols.data());
      simd::gemm(false, false, K, Sc, CK, T(1), w.data(), CK, cols.data(), Sc, T(0),
                 yn + static_cast<std::size_t>(d0) * H * W, static_cast<int>(S));
    }
    for (int k = 0; k < K; ++k) {
      T* row = yn + static_cast<std::size_t>(k) * S;
      const T bk = b.data()[k];
      for (std::size_t s = 0; s < S; ++s) row[s] += bk;
    }
  }

  if (tape.wants(y)) {
    tape.push([x, w, b, y, N, C, D, H, W, K, S, CK, slab]() mutable {
      if (!y.has_grad()) return;
      const T* dy = y.grad_or_empty().data();
      std::vector<T> cols(static_cast<std::size_t>(CK) * slab * H * W);
      std::vector<T> dcols(cols.size());
      std::vector<T> dyslab(static_cast<std::size_t>(K) * slab * H * W);
      for (int n = 0; n < N; ++n) {
        const T* xn = x.data() + static_cast<std::size_t>(n) * C * S;
        const T* dyn = dy + static_cast<std::size_t>(n) * K * S;
        if (b.requires_grad()) {
          auto& db = b.grad();
          for (int k = 0; k < K; ++k) db[k] += static_cast<T>(simd::sum(S, dyn + static_cast<std::size_t>(k) * S));
        }
        for (int d0 = 0; d0 < D; d0 += slab) {
          const int d1 = std::min(D, d0 + slab);
          const int Sc = (d1 - d0) * H * W;
          const T* dyc = dyn + static_cast<std::size_t>(d0) * H * W;
          if (w.requires_grad()) {
            im2col(xn, C, D, H, W, d0, d1, cols.data());
            simd::gemm(false, true, K, CK, Sc, T(1), dyc, static_cast<int>(S), cols.data(), Sc, T(1),
                       w.grad().data(), CK);
          }
          if (x.requires_grad()) {
            simd::gemm(true, false, CK, Sc, K, T(1), w.data(), CK, dyc, static_cast<int>(S), T(0), dcols.data(), Sc);
            col2im_add(dcols.data(), C, D, H, W, d0, d1, x.grad().data() + static_cast<std::size_t>(n) * C * S);
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> batchnorm3d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState& state, bool train) {
  check_rank(x.shape(), 5, "batchnorm3d input");
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t S = static_cast<std::size_t>(x.dim(2)) * x.dim(3) * x.dim(4);
  require(gamma.numel() == static_cast<std::size_t>(C) && beta.numel() == static_cast<std::size_t>(C),
          ErrorKind::InvalidArgument, "batchnorm3d affine parameters must have one entry per channel");
  require(state.running_mean.size() == static_cast<std::size_t>(C), ErrorKind::InvalidArgument,
          "batchnorm3d running stats size mismatch");
  const std::size_t M = static_cast<std::size_t>(N) * S;
  require(!train || M >= 2, ErrorKind::InvalidArgument, "batchnorm3d train mode needs at least 2 values per channel");

  Tensor<T> y = result<T>(x.shape(), {&x, &gamma, &beta}, tape);
  std::vector<T> xhat(x.numel());
  std::vector<T> invstd(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    double mean, var;
    if (train) {
      double s = 0;
      for (int n = 0; n < N; ++n) s += simd::sum(S, x.data() + (static_cast<std::size_t>(n) * C + c) * S);
      mean = s / static_cast<double>(M);
      double ss = 0;
      for (int n = 0; n < N; ++n)
        ss += simd::sum_squared_deviation(S, x.data() + (static_cast<std::size_t>(n) * C + c) * S, mean);
      var = ss / static_cast<double>(M);
      state.running_mean[c] = (1 - state.momentum) * state.running_mean[c] + state.momentum * mean;
      state.running_var[c] =
          (1 - state.momentum) * state.running_var[c] + state.momentum * ss / static_cast<double>(M - 1);
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + state.eps);
    invstd[c] = static_cast<T>(is);
    const T g = gamma.data()[c], bt = beta.data()[c];
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * S;
      simd::scale_shift(S, x.data() + off, static_cast<T>(is), static_cast<T>(-mean * is), xhat.data() + off);
      simd::scale_shift(S, xhat.data() + off, g, bt, y.data() + off);
    }
  }

  if (tape.wants(y)) {
    tape.push([x, gamma, beta, y, xhat = std::move(xhat), invstd = std::move(invstd), N, C, S, M, train]() mutable {
      if (!y.has_grad()) return;
      const T* dy = y.grad_or_empty().data();
      for (int c = 0; c < C; ++c) {
        double sdy = 0, sdyx = 0;
        for (int n = 0; n < N; ++n) {
          const std::size_t off = (static_cast<std::size_t>(n) * C + c) * S;
          sdy += simd::sum(S, dy + off);
          sdyx += simd::dot(S, dy + off, xhat.data() + off);
        }
        if (gamma.requires_grad()) gamma.grad()[c] += static_cast<T>(sdyx);
        if (beta.requires_grad()) beta.grad()[c] += static_cast<T>(sdy);
        if (!x.requires_grad()) continue;
        auto& dx = x.grad();
        const double g = gamma.data()[c];
        const double is = invstd[c];
        for (int n = 0; n < N; ++n) {
          const std::size_t off = (static_cast<std::size_t>(n) * C + c) * S;
          if (train) {
            const double k = g * is;
            const double mdy = sdy / static_cast<double>(M), mdyx = sdyx / static_cast<double>(M);
            for (std::size_t s = 0; s < S; ++s)
              dx[off + s] += static_cast<T>(k * (dy[off + s] - mdy - xhat[off + s] * mdyx));
          } else {
            const T k = static_cast<T>(g * is);
            for (std::size_t s = 0; s < S; ++s) dx[off + s] += k * dy[off + s];
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> y = result<T>(x.shape(), {&x}, tape);
  simd::relu_forward(x.numel(), x.data(), y.data());
  if (tape.wants(y)) {
    tape.push([x, y]() mutable {
      if (!y.has_grad() || !x.requires_grad()) return;
      simd::relu_backward(x.numel(), x.data(), y.grad_or_empty().data(), x.grad().data());
    });
  }
  return y;
}

template <typename T>
Tensor<T> maxpool3d(Tape<T>& tape, const Tensor<T>& x) {
  check_rank(x.shape(), 5, "maxpool3d input");
  const int N = x.dim(0), C = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  require(D % 2 == 0 && H % 2 == 0 && W % 2 == 0, ErrorKind::InvalidArgument,
          "maxpool3d needs even spatial dims, got " + shape_str(x.shape()));
  const int d2 = D / 2, h2 = H / 2, w2 = W / 2;
  Tensor<T> y = result<T>({N, C, d2, h2, w2}, {&x}, tape);
  std::vector<std::uint32_t> arg(y.numel());
  const std::size_t S = static_cast<std::size_t>(D) * H * W;
  std::size_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* xp = x.data() + static_cast<std::size_t>(nc) * S;
    for (int d = 0; d < d2; ++d)
      for (int h = 0; h < h2; ++h)
        for (int w = 0; w < w2; ++w, ++o) {
          std::size_t best = (static_cast<std::size_t>(2 * d) * H + 2 * h) * W + 2 * w;
          T bv = xp[best];
          for (int a = 0; a < 2; ++a)
            for (int bb = 0; bb < 2; ++bb)
              for (int cc = 0; cc < 2; ++cc) {
                const std::size_t idx = (static_cast<std::size_t>(2 * d + a) * H + 2 * h + bb) * W + 2 * w + cc;
                if (xp[idx] > bv) {
                  bv = xp[idx];
                  best = idx;
                }
              }
          y.data()[o] = bv;
          arg[o] = static_cast<std::uint32_t>(best);
        }
  }
  if (tape.wants(y)) {
    tape.push([x, y, arg = std::move(arg), S, per = static_cast<std::size_t>(d2) * h2 * w2]() mutable {
      if (!y.has_grad() || !x.requires_grad()) return;
      auto& dx = x.grad();
      const auto& dy = y.grad_or_empty();
      for (std::size_t o = 0; o < dy.size(); ++o) dx[(o / per) * S + arg[o]] += dy[o];
    });
  }
  return y;
}

template <typename T>
Tensor<T> pointwise_layer(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                          Activation act) {
  check_rank(x.shape(), 3, "pointwise_layer input");
  check_rank(w.shape(), 2, "pointwise_layer weight");
  const int N = x.dim(0), F = x.dim(1), P = x.dim(2), G = w.dim(0);
  require(w.dim(1) == F, ErrorKind::InvalidArgument,
          "pointwise_layer weight " + shape_str(w.shape()) + " does not match input " + shape_str(x.shape()));
  require(b.numel() == static_cast<std::size_t>(G), ErrorKind::InvalidArgument, "pointwise_layer bias size mismatch");
  Tensor<T> y = result<T>({N, G, P}, {&x, &w, &b}, tape);
  for (int n = 0; n < N; ++n) {
    T* yn = y.data() + static_cast<std::size_t>(n) * G * P;
    simd::gemm(false, false, G, P, F, T(1), w.data(), F, x.data() + static_cast<std::size_t>(n) * F * P, P, T(0), yn,
               P);
    for (int g = 0; g < G; ++g) {
      T* row = yn + static_cast<std::size_t>(g) * P;
      const T bg = b.data()[g];
      for (int p = 0; p < P; ++p) row[p] += bg;
    }
  }
  if (act == Activation::Relu) simd::relu_forward(y.numel(), y.data(), y.data());

  if (tape.wants(y)) {
    tape.push([x, w, b, y, act, N, F, P, G]() mutable {
      if (!y.has_grad()) return;
      std::vector<T> dy = y.grad_or_empty();
      if (act == Activation::Relu) {
        for (std::size_t i = 0; i < dy.size(); ++i)
          if (!(y.data()[i] > T(0))) dy[i] = T(0);
      }
      for (int n = 0; n < N; ++n) {
        const T* dyn = dy.data() + static_cast<std::size_t>(n) * G * P;
        const T* xn = x.data() + static_cast<std::size_t>(n) * F * P;
        if (b.requires_grad()) {
          auto& db = b.grad();
          for (int g = 0; g < G; ++g) db[g] += static_cast<T>(simd::sum(P, dyn + static_cast<std::size_t>(g) * P));
        }
        if (w.requires_grad()) simd::gemm(false, true, G, F, P, T(1), dyn, P, xn, P, T(1), w.grad().data(), F);
        if (x.requires_grad())
          simd::gemm(true, false, F, P, G, T(1), w.data(), F, dyn, P, T(1),
                     x.grad().data() + static_cast<std::size_t>(n) * F * P, P);
      }
    });
  }
  return y;
}

namespace {

struct AxisLerp {
  int i0, i1;
  double t;
};

AxisLerp axis_lerp(double q, int D) {
  double x = ((q + 1.0) * D - 1.0) * 0.5;
  x = std::clamp(x, 0.0, static_cast<double>(D - 1));
  const double r = std::nearbyint(x);
  if (std::abs(x - r) < 1e-9) x = r;
  if (D == 1) return {0, 0, 0.0};
  const int i0 = std::min(static_cast<int>(std::floor(x)), D - 2);
  return {i0, i0 + 1, x - i0};
}

}  // namespace

template <typename T>
Tensor<T> trilinear_sample(Tape<T>& tape, const Tensor<T>& grid, const std::vector<Vec3>& points) {
  check_rank(grid.shape(), 5, "trilinear_sample grid");
  const int N = grid.dim(0), C = grid.dim(1), D = grid.dim(2), H = grid.dim(3), W = grid.dim(4);
  require(N >= 1 && points.size() % static_cast<std::size_t>(N) == 0, ErrorKind::InvalidArgument,
          "trilinear_sample: point count must be a multiple of the batch size");
  const int P = static_cast<int>(points.size() / static_cast<std::size_t>(N));
  const std::size_t S = static_cast<std::size_t>(D) * H * W;
  Tensor<T> y = result<T>({N, C, P}, {&grid}, tape);

  std::vector<std::uint32_t> idx(points.size() * 8);
  std::vector<T> wt(points.size() * 8);
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    const Vec3& q = points[pi];
    require(std::isfinite(q.x) && std::isfinite(q.y) && std::isfinite(q.z), ErrorKind::InvalidArgument,
            "trilinear_sample: non-finite query point");
    const AxisLerp ax = axis_lerp(q.x, W), ay = axis_lerp(q.y, H), az = axis_lerp(q.z, D);
    for (int c = 0; c < 8; ++c) {
      const int zi = (c & 4) ? az.i1 : az.i0, yi = (c & 2) ? ay.i1 : ay.i0, xi = (c & 1) ? ax.i1 : ax.i0;
      const double wz = (c & 4) ? az.t : 1.0 - az.t, wy = (c & 2) ? ay.t : 1.0 - ay.t,
                   wx = (c & 1) ? ax.t : 1.0 - ax.t;
      idx[pi * 8 + c] = static_cast<std::uint32_t>((static_cast<std::size_t>(zi) * H + yi) * W + xi);
      wt[pi * 8 + c] = static_cast<T>(wz * wy * wx);
    }
  }
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* g = grid.data() + (static_cast<std::size_t>(n) * C + c) * S;
      T* out = y.data() + (static_cast<std::size_t>(n) * C + c) * P;
      for (int p = 0; p < P; ++p) {
        const std::size_t pi = static_cast<std::size_t>(n) * P + p;
        const std::uint32_t* id = &idx[pi * 8];
        const T* w = &wt[pi * 8];
        T acc = T(0);
        for (int k = 0; k < 8; ++k) acc += w[k] * g[id[k]];
        out[p] = acc;
      }
    }

  if (tape.wants(y)) {
    tape.push([grid, y, idx = std::move(idx), wt = std::move(wt), N, C, P, S]() mutable {
      if (!y.has_grad() || !grid.requires_grad()) return;
      auto& dg = grid.grad();
      const auto& dy = y.grad_or_empty();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          T* g = dg.data() + (static_cast<std::size_t>(n) * C + c) * S;
          const T* d = dy.data() + (static_cast<std::size_t>(n) * C + c) * P;
          for (int p = 0; p < P; ++p) {
            const std::size_t pi = static_cast<std::size_t>(n) * P + p;
            for (int k = 0; k < 8; ++k) g[idx[pi * 8 + k]] += wt[pi * 8 + k] * d[p];
          }
        }
    });
  }
  return y;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), ErrorKind::InvalidArgument, "concat_channels needs at least one tensor");
  const int N = parts[0].dim(0), P = parts[0].dim(2);
  int Ctot = 0;
  bool rg = false;
  for (const auto& t : parts) {
    check_rank(t.shape(), 3, "concat_channels part");
    require(t.dim(0) == N && t.dim(2) == P, ErrorKind::InvalidArgument, "concat_channels: mismatched N or P");
    Ctot += t.dim(1);
    rg = rg || t.requires_grad();
  }
  Tensor<T> y = Tensor<T>::zeros({N, Ctot, P}, rg && tape.recording());
  for (int n = 0; n < N; ++n) {
    int c0 = 0;
    for (const auto& t : parts) {
      const std::size_t len = static_cast<std::size_t>(t.dim(1)) * P;
      std::copy_n(t.data() + n * len, len, y.data() + (static_cast<std::size_t>(n) * Ctot + c0) * P);
      c0 += t.dim(1);
    }
  }
  if (tape.wants(y)) {
    tape.push([parts, y, N, P, Ctot]() mutable {
      if (!y.has_grad()) return;
      const auto& dy = y.grad_or_empty();
      for (int n = 0; n < N; ++n) {
        int c0 = 0;
        for (auto& t : parts) {
          const std::size_t len = static_cast<std::size_t>(t.dim(1)) * P;
          if (t.requires_grad()) {
            T* dst = t.grad().data() + n * len;
            const T* src = dy.data() + (static_cast<std::size_t>(n) * Ctot + c0) * P;
            for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
          }
          c0 += t.dim(1);
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> select_channel(Tape<T>& tape, const Tensor<T>& x, int c) {
  check_rank(x.shape(), 3, "select_channel input");
  const int N = x.dim(0), C = x.dim(1), P = x.dim(2);
  require(c >= 0 && c < C, ErrorKind::InvalidArgument, "select_channel index out of range");
  Tensor<T> y = result<T>({N, 1, P}, {&x}, tape);
  for (int n = 0; n < N; ++n)
    std::copy_n(x.data() + (static_cast<std::size_t>(n) * C + c) * P, P, y.data() + static_cast<std::size_t>(n) * P);
  if (tape.wants(y)) {
    tape.push([x, y, N, C, P, c]() mutable {
      if (!y.has_grad() || !x.requires_grad()) return;
      auto& dx = x.grad();
      const auto& dy = y.grad_or_empty();
      for (int n = 0; n < N; ++n)
        for (int p = 0; p < P; ++p) dx[(static_cast<std::size_t>(n) * C + c) * P + p] += dy[static_cast<std::size_t>(n) * P + p];
    });
  }
  return y;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), ErrorKind::InvalidArgument,
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> y = result<T>(a.shape(), {&a, &b}, tape);
  for (std::size_t i = 0; i < y.numel(); ++i) y.data()[i] = a.data()[i] + b.data()[i];
  if (tape.wants(y)) {
    tape.push([a, b, y]() mutable {
      if (!y.has_grad()) return;
      const auto& dy = y.grad_or_empty();
      if (a.requires_grad()) simd::axpy(dy.size(), T(1), dy.data(), a.grad().data());
      if (b.requires_grad()) simd::axpy(dy.size(), T(1), dy.data(), b.grad().data());
    });
  }
  return y;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T s) {
  Tensor<T> y = result<T>(a.shape(), {&a}, tape);
  for (std::size_t i = 0; i < y.numel(); ++i) y.data()[i] = s * a.data()[i];
  if (tape.wants(y)) {
    tape.push([a, y, s]() mutable {
      if (!y.has_grad() || !a.requires_grad()) return;
      simd::axpy(y.numel(), s, y.grad_or_empty().data(), a.grad().data());
    });
  }
  return y;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
  Tensor<T> y = result<T>({}, {&a}, tape);
  y.data()[0] = static_cast<T>(simd::sum(a.numel(), a.data()));
  if (tape.wants(y)) {
    tape.push([a, y]() mutable {
      if (!y.has_grad() || !a.requires_grad()) return;
      const T g = y.grad_or_empty()[0];
      for (auto& v : a.grad()) v += g;
    });
  }
  return y;
}

template <typename T>
Tensor<T> bce_with_logits(Tape<T>& tape, const Tensor<T>& logits, const std::vector<T>& targets) {
  require(targets.size() == logits.numel(), ErrorKind::InvalidArgument, "bce_with_logits: target count mismatch");
  const std::size_t M = logits.numel();
  require(M > 0, ErrorKind::InvalidArgument, "bce_with_logits on an empty tensor");
  Tensor<T> y = result<T>({}, {&logits}, tape);
  double acc = 0;
  for (std::size_t i = 0; i < M; ++i) {
    const double x = logits.data()[i], t = targets[i];
    acc += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  y.data()[0] = static_cast<T>(acc / static_cast<double>(M));
  if (tape.wants(y)) {
    tape.push([logits, y, targets, M]() mutable {
      if (!y.has_grad() || !logits.requires_grad()) return;
      const double g = y.grad_or_empty()[0] / static_cast<double>(M);
      auto& dx = logits.grad();
      for (std::size_t i = 0; i < M; ++i) {
        const double x = logits.data()[i];
        const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        dx[i] += static_cast<T>(g * (s - targets[i]));
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, const std::vector<int>& targets) {
  check_rank(logits.shape(), 3, "cross_entropy logits");
  const int N = logits.dim(0), C = logits.dim(1), P = logits.dim(2);
  const std::size_t M = static_cast<std::size_t>(N) * P;
  require(targets.size() == M && M > 0, ErrorKind::InvalidArgument, "cross_entropy: target count mismatch");
  for (int t : targets)
    require(t >= 0 && t < C, ErrorKind::InvalidArgument, "cross_entropy: class id " + std::to_string(t) + " out of range");
  Tensor<T> y = result<T>({}, {&logits}, tape);
  std::vector<T> prob(logits.numel());
  double acc = 0;
  for (int n = 0; n < N; ++n)
    for (int p = 0; p < P; ++p) {
      auto at = [&](int c) { return static_cast<std::size_t>(n * C + c) * P + p; };
      double mx = -INFINITY;
      for (int c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(logits.data()[at(c)]));
      double se = 0;
      for (int c = 0; c < C; ++c) se += std::exp(logits.data()[at(c)] - mx);
      const double lse = mx + std::log(se);
      for (int c = 0; c < C; ++c) prob[at(c)] = static_cast<T>(std::exp(logits.data()[at(c)] - lse));
      acc += lse - logits.data()[at(targets[static_cast<std::size_t>(n) * P + p])];
    }
  y.data()[0] = static_cast<T>(acc / static_cast<double>(M));
  if (tape.wants(y)) {
    tape.push([logits, y, targets, prob = std::move(prob), N, C, P, M]() mutable {
      if (!y.has_grad() || !logits.requires_grad()) return;
      const double g = y.grad_or_empty()[0] / static_cast<double>(M);
      auto& dx = logits.grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          for (int p = 0; p < P; ++p) {
            const std::size_t i = static_cast<std::size_t>(n * C + c) * P + p;
            const double onehot = targets[static_cast<std::size_t>(n) * P + p] == c ? 1.0 : 0.0;
            dx[i] += static_cast<T>(g * (prob[i] - onehot));
          }
    });
  }
  return y;
}

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, const AdamConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  require(state.m.size() == params.size(), ErrorKind::InvalidArgument, "adam state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& g = p.grad_or_empty();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      const double pj = p.data()[j];
      const double gj = (g.empty() ? 0.0 : static_cast<double>(g[j])) + cfg.weight_decay * pj;
      const double mj = cfg.beta1 * m[j] + (1 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1 - cfg.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p.data()[j] = static_cast<T>(pj - cfg.lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps));
    }
  }
}

#define ORGANOCC_AD_INSTANTIATE(T)                                                                              \
  template class Tensor<T>;                                                                                     \
  template class Tape<T>;                                                                                       \
  template Tensor<T> conv3d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> batchnorm3d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                \
                                 BatchNormState&, bool);                                                        \
  template Tensor<T> relu(Tape<T>&, const Tensor<T>&);                                                          \
  template Tensor<T> maxpool3d(Tape<T>&, const Tensor<T>&);                                                     \
  template Tensor<T> pointwise_layer(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                     Activation);                                                               \
  template Tensor<T> trilinear_sample(Tape<T>&, const Tensor<T>&, const std::vector<Vec3>&);                    \
  template Tensor<T> concat_channels(Tape<T>&, const std::vector<Tensor<T>>&);                                  \
  template Tensor<T> select_channel(Tape<T>&, const Tensor<T>&, int);                                           \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                                      \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                                           \
  template Tensor<T> bce_with_logits(Tape<T>&, const Tensor<T>&, const std::vector<T>&);                        \
  template Tensor<T> cross_entropy(Tape<T>&, const Tensor<T>&, const std::vector<int>&);                        \
  template void adam_step(std::vector<Tensor<T>>&, AdamState<T>&, const AdamConfig&);

ORGANOCC_AD_INSTANTIATE(float)
ORGANOCC_AD_INSTANTIATE(double)

}  // namespace organocc::ad
