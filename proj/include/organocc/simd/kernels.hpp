#pragma once

// Data-parallel inner loops used by the tensor engine. Each kernel has a
// portable scalar reference (simd/scalar_kernels.hpp, templated so the
// gradient-check build can run it in double) and, for float, an AVX2+FMA
// variant selected once at runtime. Set ORGANOCC_SIMD=scalar to force the
// reference path.

#include <cstddef>

namespace organocc::simd {

enum class Backend { Scalar, Avx2 };

const char* backend_name(Backend b);
bool backend_supported(Backend b);

// Backend used by the float dispatchers below. Detected on first use.
Backend active_backend();

// Overrides the detected backend. Throws Error(InvalidArgument) when the CPU
// cannot run the requested backend.
void set_backend(Backend b);

// RAII override, used by equivalence tests.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b);
  ~ScopedBackend();
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

// Row-major C = alpha * op(A) * op(B) + beta * C, where op(A) is m x k and
// op(B) is k x n. When beta == 0, C is overwritten (NaNs in C are ignored).
//
// Every output element is reduced over k in the same order regardless of
// n, m, or its position, so splitting the column range into chunks yields
// bitwise-identical results.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);

// y += alpha * x
void axpy(std::size_t n, float alpha, const float* x, float* y);
void axpy(std::size_t n, double alpha, const double* x, double* y);

// y = max(x, 0)
void relu_forward(std::size_t n, const float* x, float* y);
void relu_forward(std::size_t n, const double* x, double* y);

// dx += (x > 0) ? dy : 0
void relu_backward(std::size_t n, const float* x, const float* dy, float* dx);
void relu_backward(std::size_t n, const double* x, const double* dy, double* dx);

// y = scale * x + shift
void scale_shift(std::size_t n, const float* x, float scale, float shift, float* y);
void scale_shift(std::size_t n, const double* x, double scale, double shift, double* y);

// Sum of elements, accumulated in double.
double sum(std::size_t n, const float* x);
double sum(std::size_t n, const double* x);

// Sum of (x - center)^2, accumulated in double.
double sum_squared_deviation(std::size_t n, const float* x, double center);
double sum_squared_deviation(std::size_t n, const double* x, double center);

// Sum of x * y, accumulated in double.
double dot(std::size_t n, const float* x, const float* y);
double dot(std::size_t n, const double* x, const double* y);

}  // namespace organocc::simd
