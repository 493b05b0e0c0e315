#include "organocc/simd/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

#include "organocc/error.hpp"
#include "organocc/simd/avx2_kernels.hpp"
#include "organocc/simd/scalar_kernels.hpp"

namespace organocc::simd {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend detect() {
  if (const char* env = std::getenv("ORGANOCC_SIMD"); env && std::strcmp(env, "scalar") == 0) {
    return Backend::Scalar;
  }
  return cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{detect()};
  return slot;
}

bool use_avx2() { return backend_slot().load(std::memory_order_relaxed) == Backend::Avx2; }

}  // namespace

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::Scalar: return "scalar";
    case Backend::Avx2: return "avx2";
  }
  return "unknown";
}

bool backend_supported(Backend b) { return b == Backend::Scalar || cpu_has_avx2(); }

Backend active_backend() { return backend_slot().load(); }

void set_backend(Backend b) {
  require(backend_supported(b), ErrorKind::InvalidArgument,
          std::string("SIMD backend not supported on this CPU: ") + backend_name(b));
  backend_slot().store(b);
}

ScopedBackend::ScopedBackend(Backend b) : previous_(active_backend()) { set_backend(b); }
ScopedBackend::~ScopedBackend() { backend_slot().store(previous_); }

void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  if (use_avx2()) return avx2::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  scalar::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
  scalar::gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void axpy(std::size_t n, float alpha, const float* x, float* y) {
  if (use_avx2()) return avx2::axpy(n, alpha, x, y);
  scalar::axpy(n, alpha, x, y);
}
void axpy(std::size_t n, double alpha, const double* x, double* y) { scalar::axpy(n, alpha, x, y); }

void relu_forward(std::size_t n, const float* x, float* y) {
  if (use_avx2()) return avx2::relu_forward(n, x, y);
  scalar::relu_forward(n, x, y);
}
void relu_forward(std::size_t n, const double* x, double* y) { scalar::relu_forward(n, x, y); }

void relu_backward(std::size_t n, const float* x, const float* dy, float* dx) {
  if (use_avx2()) return avx2::relu_backward(n, x, dy, dx);
  scalar::relu_backward(n, x, dy, dx);
}
void relu_backward(std::size_t n, const double* x, const double* dy, double* dx) {
  scalar::relu_backward(n, x, dy, dx);
}

void scale_shift(std::size_t n, const float* x, float scale, float shift, float* y) {
  if (use_avx2()) return avx2::scale_shift(n, x, scale, shift, y);
  scalar::scale_shift(n, x, scale, shift, y);
}
void scale_shift(std::size_t n, const double* x, double scale, double shift, double* y) {
  scalar::scale_shift(n, x, scale, shift, y);
}

double sum(std::size_t n, const float* x) {
  return use_avx2() ? avx2::sum(n, x) : scalar::sum(n, x);
}
double sum(std::size_t n, const double* x) { return scalar::sum(n, x); }

double sum_squared_deviation(std::size_t n, const float* x, double center) {
  return use_avx2() ? avx2::sum_squared_deviation(n, x, center)
                    : scalar::sum_squared_deviation(n, x, center);
}
double sum_squared_deviation(std::size_t n, const double* x, double center) {
  return scalar::sum_squared_deviation(n, x, center);
}

double dot(std::size_t n, const float* x, const float* y) {
  return use_avx2() ? avx2::dot(n, x, y) : scalar::dot(n, x, y);
}
double dot(std::size_t n, const double* x, const double* y) { return scalar::dot(n, x, y); }

}  // namespace organocc::simd
