// AVX2 + FMA float kernels. This file is compiled with -mavx2 -mfma and must
// only be entered through the runtime dispatcher.

#include <immintrin.h>

#include <algorithm>
#include <cstring>
#include <vector>

#include "organocc/simd/avx2_kernels.hpp"

namespace organocc::simd::avx2 {
namespace {

// Register block: 6 rows x 16 columns of C held in 12 ymm accumulators.
constexpr int kMr = 6;
constexpr int kNr = 16;
// Cache blocks: packed A block ~ kMc*kKc floats (L2), packed B panel
// kKc*kNc floats (L3).
constexpr int kMc = 72;
constexpr int kKc = 256;
constexpr int kNc = 3072;

struct Packs {
  std::vector<float> a;
  std::vector<float> b;
};

Packs& packs() {
  thread_local Packs p;
  return p;
}

inline float load_a(bool ta, const float* a, int lda, int i, int p) {
  return ta ? a[static_cast<std::ptrdiff_t>(p) * lda + i] : a[static_cast<std::ptrdiff_t>(i) * lda + p];
}

// Packs rows [i0, i0+mc) x cols [p0, p0+kc) of alpha*op(A) into kMr-row strips,
// zero padding the last strip.
void pack_a(bool ta, const float* a, int lda, int i0, int mc, int p0, int kc, float alpha,
            float* out) {
  for (int ir = 0; ir < mc; ir += kMr) {
    const int rows = std::min(kMr, mc - ir);
    for (int p = 0; p < kc; ++p) {
      for (int r = 0; r < kMr; ++r) {
        *out++ = r < rows ? alpha * load_a(ta, a, lda, i0 + ir + r, p0 + p) : 0.0f;
      }
    }
  }
}

// Packs rows [p0, p0+kc) x cols [j0, j0+nc) of op(B) into kNr-column strips.
void pack_b(bool tb, const float* b, int ldb, int p0, int kc, int j0, int nc, float* out) {
  for (int jr = 0; jr < nc; jr += kNr) {
    const int cols = std::min(kNr, nc - jr);
    if (!tb && cols == kNr) {
      for (int p = 0; p < kc; ++p) {
        const float* src = b + static_cast<std::ptrdiff_t>(p0 + p) * ldb + j0 + jr;
        _mm256_storeu_ps(out, _mm256_loadu_ps(src));
        _mm256_storeu_ps(out + 8, _mm256_loadu_ps(src + 8));
        out += kNr;
      }
      continue;
    }
    for (int p = 0; p < kc; ++p) {
      for (int col = 0; col < kNr; ++col) {
        float v = 0.0f;
        if (col < cols) {
          const int j = j0 + jr + col;
          v = tb ? b[static_cast<std::ptrdiff_t>(j) * ldb + p0 + p]
                 : b[static_cast<std::ptrdiff_t>(p0 + p) * ldb + j];
        }
        *out++ = v;
      }
    }
  }
}

// C[0:rows, 0:cols] += Ap * Bp over kc.
void micro_kernel(int kc, const float* ap, const float* bp, float* c, int ldc, int rows,
                  int cols) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
  __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();

  for (int p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_loadu_ps(bp);
    const __m256 b1 = _mm256_loadu_ps(bp + 8);
    __m256 a = _mm256_broadcast_ss(ap + 0);
    c00 = _mm256_fmadd_ps(a, b0, c00);
    c01 = _mm256_fmadd_ps(a, b1, c01);
    a = _mm256_broadcast_ss(ap + 1);
    c10 = _mm256_fmadd_ps(a, b0, c10);
    c11 = _mm256_fmadd_ps(a, b1, c11);
    a = _mm256_broadcast_ss(ap + 2);
    c20 = _mm256_fmadd_ps(a, b0, c20);
    c21 = _mm256_fmadd_ps(a, b1, c21);
    a = _mm256_broadcast_ss(ap + 3);
    c30 = _mm256_fmadd_ps(a, b0, c30);
    c31 = _mm256_fmadd_ps(a, b1, c31);
    a = _mm256_broadcast_ss(ap + 4);
    c40 = _mm256_fmadd_ps(a, b0, c40);
    c41 = _mm256_fmadd_ps(a, b1, c41);
    a = _mm256_broadcast_ss(ap + 5);
    c50 = _mm256_fmadd_ps(a, b0, c50);
    c51 = _mm256_fmadd_ps(a, b1, c51);
    ap += kMr;
    bp += kNr;
  }

  alignas(32) float tile[kMr][kNr];
  _mm256_store_ps(tile[0], c00); _mm256_store_ps(tile[0] + 8, c01);
  _mm256_store_ps(tile[1], c10); _mm256_store_ps(tile[1] + 8, c11);
  _mm256_store_ps(tile[2], c20); _mm256_store_ps(tile[2] + 8, c21);
  _mm256_store_ps(tile[3], c30); _mm256_store_ps(tile[3] + 8, c31);
  _mm256_store_ps(tile[4], c40); _mm256_store_ps(tile[4] + 8, c41);
  _mm256_store_ps(tile[5], c50); _mm256_store_ps(tile[5] + 8, c51);

  if (cols == kNr) {
    for (int r = 0; r < rows; ++r) {
      float* crow = c + static_cast<std::ptrdiff_t>(r) * ldc;
      _mm256_storeu_ps(crow, _mm256_add_ps(_mm256_loadu_ps(crow), _mm256_load_ps(tile[r])));
      _mm256_storeu_ps(crow + 8,
                       _mm256_add_ps(_mm256_loadu_ps(crow + 8), _mm256_load_ps(tile[r] + 8)));
    }
    return;
  }
  for (int r = 0; r < rows; ++r) {
    float* crow = c + static_cast<std::ptrdiff_t>(r) * ldc;
    for (int col = 0; col < cols; ++col) crow[col] += tile[r][col];
  }
}

}  // namespace

void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == 0.0f) {
      std::memset(crow, 0, sizeof(float) * static_cast<std::size_t>(n));
    } else if (beta != 1.0f) {
      scale_shift(static_cast<std::size_t>(n), crow, beta, 0.0f, crow);
    }
  }
  if (m == 0 || n == 0 || k == 0 || alpha == 0.0f) return;

  Packs& buf = packs();
  const int nc_max = std::min(kNc, n);
  const int kc_max = std::min(kKc, k);
  buf.b.resize(static_cast<std::size_t>((nc_max + kNr - 1) / kNr) * kNr * kc_max);
  buf.a.resize(static_cast<std::size_t>((std::min(kMc, m) + kMr - 1) / kMr) * kMr * kc_max);

  for (int jc = 0; jc < n; jc += kNc) {
    const int nc = std::min(kNc, n - jc);
    for (int pc = 0; pc < k; pc += kKc) {
      const int kc = std::min(kKc, k - pc);
      pack_b(tb, b, ldb, pc, kc, jc, nc, buf.b.data());
      for (int ic = 0; ic < m; ic += kMc) {
        const int mc = std::min(kMc, m - ic);
        pack_a(ta, a, lda, ic, mc, pc, kc, alpha, buf.a.data());
        for (int jr = 0; jr < nc; jr += kNr) {
          const float* bp = buf.b.data() + static_cast<std::ptrdiff_t>(jr / kNr) * kNr * kc;
          const int cols = std::min(kNr, nc - jr);
          for (int ir = 0; ir < mc; ir += kMr) {
            const float* ap = buf.a.data() + static_cast<std::ptrdiff_t>(ir / kMr) * kMr * kc;
            const int rows = std::min(kMr, mc - ir);
            float* cblk = c + static_cast<std::ptrdiff_t>(ic + ir) * ldc + jc + jr;
            micro_kernel(kc, ap, bp, cblk, ldc, rows, cols);
          }
        }
      }
    }
  }
}

void axpy(std::size_t n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void relu_forward(std::size_t n, const float* x, float* y) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward(std::size_t n, const float* x, const float* dy, float* dx) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
    const __m256 g = _mm256_and_ps(mask, _mm256_loadu_ps(dy + i));
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), g));
  }
  for (; i < n; ++i) {
    if (x[i] > 0.0f) dx[i] += dy[i];
  }
}

void scale_shift(std::size_t n, const float* x, float scale, float shift, float* y) {
  const __m256 vs = _mm256_set1_ps(scale);
  const __m256 vb = _mm256_set1_ps(shift);
  std::size_t i = 0;
  // mul+add rather than fma so results match the scalar reference exactly.
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_mul_ps(vs, _mm256_loadu_ps(x + i)), vb));
  }
  for (; i < n; ++i) y[i] = scale * x[i] + shift;
}

namespace {

inline double hsum(__m256d v) {
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, v);
  return (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
}

}  // namespace

double sum(std::size_t n, const float* x) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    acc0 = _mm256_add_pd(acc0, _mm256_cvtps_pd(_mm256_castps256_ps128(v)));
    acc1 = _mm256_add_pd(acc1, _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1)));
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i];
  return s;
}

double sum_squared_deviation(std::size_t n, const float* x, double center) {
  const __m256d c = _mm256_set1_pd(center);
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256d d0 = _mm256_sub_pd(_mm256_cvtps_pd(_mm256_castps256_ps128(v)), c);
    const __m256d d1 = _mm256_sub_pd(_mm256_cvtps_pd(_mm256_extractf128_ps(v, 1)), c);
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
    acc1 = _mm256_fmadd_pd(d1, d1, acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    const double d = static_cast<double>(x[i]) - center;
    s += d * d;
  }
  return s;
}

double dot(std::size_t n, const float* x, const float* y) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 vx = _mm256_loadu_ps(x + i);
    const __m256 vy = _mm256_loadu_ps(y + i);
    acc0 = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm256_castps256_ps128(vx)),
                           _mm256_cvtps_pd(_mm256_castps256_ps128(vy)), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm256_extractf128_ps(vx, 1)),
                           _mm256_cvtps_pd(_mm256_extractf128_ps(vy, 1)), acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += static_cast<double>(x[i]) * static_cast<double>(y[i]);
  return s;
}

}  // namespace organocc::simd::avx2
