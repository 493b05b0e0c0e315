#pragma once

#include <cstddef>

// Defined in a translation unit compiled with -mavx2 -mfma. Only call these
// after backend_supported(Backend::Avx2) returned true.
namespace organocc::simd::avx2 {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc);
void axpy(std::size_t n, float alpha, const float* x, float* y);
void relu_forward(std::size_t n, const float* x, float* y);
void relu_backward(std::size_t n, const float* x, const float* dy, float* dx);
void scale_shift(std::size_t n, const float* x, float scale, float shift, float* y);
double sum(std::size_t n, const float* x);
double sum_squared_deviation(std::size_t n, const float* x, double center);
double dot(std::size_t n, const float* x, const float* y);

}  // namespace organocc::simd::avx2
