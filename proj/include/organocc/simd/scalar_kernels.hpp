#pragma once

#include <algorithm>
#include <cstddef>

namespace organocc::simd::scalar {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == T(0)) {
      std::fill(crow, crow + n, T(0));
    } else if (beta != T(1)) {
      for (int j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  if (m == 0 || n == 0 || k == 0) return;

  if (!trans_b) {
    for (int i = 0; i < m; ++i) {
      T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
      for (int p = 0; p < k; ++p) {
        const T aip = alpha * (trans_a ? a[static_cast<std::ptrdiff_t>(p) * lda + i]
                                       : a[static_cast<std::ptrdiff_t>(i) * lda + p]);
        if (aip == T(0)) continue;
        const T* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
    return;
  }

  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    for (int j = 0; j < n; ++j) {
      const T* bcol = b + static_cast<std::ptrdiff_t>(j) * ldb;
      T acc = 0;
      for (int p = 0; p < k; ++p) {
        const T aip = trans_a ? a[static_cast<std::ptrdiff_t>(p) * lda + i]
                              : a[static_cast<std::ptrdiff_t>(i) * lda + p];
        acc += aip * bcol[p];
      }
      crow[j] += alpha * acc;
    }
  }
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void relu_forward(std::size_t n, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(std::size_t n, const T* x, const T* dy, T* dx) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] > T(0)) dx[i] += dy[i];
  }
}

template <typename T>
void scale_shift(std::size_t n, const T* x, T scale, T shift, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = scale * x[i] + shift;
}

template <typename T>
double sum(std::size_t n, const T* x) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

template <typename T>
double sum_squared_deviation(std::size_t n, const T* x, double center) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(x[i]) - center;
    s += d * d;
  }
  return s;
}

template <typename T>
double dot(std::size_t n, const T* x, const T* y) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(x[i]) * static_cast<double>(y[i]);
  return s;
}

}  // namespace organocc::simd::scalar
