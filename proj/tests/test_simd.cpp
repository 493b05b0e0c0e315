#include <cmath>
#include <vector>

#include "doctest.h"
#include "organocc/rng.hpp"
#include "organocc/simd/kernels.hpp"
#include "organocc/simd/scalar_kernels.hpp"

using namespace organocc;

namespace {

std::vector<float> random_vec(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(uniform(rng, -1.0, 1.0));
  return v;
}

bool avx2_available() { return simd::backend_supported(simd::Backend::Avx2); }

}  // namespace

TEST_CASE("scalar gemm matches naive triple loop in double") {
  Rng rng(1);
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      const int m = 5, n = 7, k = 4;
      std::vector<double> a(m * k), b(k * n), c(m * n, 0.5);
      for (auto& x : a) x = uniform(rng, -1, 1);
      for (auto& x : b) x = uniform(rng, -1, 1);
      auto c_ref = c;
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          double s = 0;
          for (int p = 0; p < k; ++p) {
            const double av = ta ? a[p * m + i] : a[i * k + p];
            const double bv = tb ? b[j * k + p] : b[p * n + j];
            s += av * bv;
          }
          c_ref[i * n + j] = 2.0 * s + 0.25 * c_ref[i * n + j];
        }
      }
      simd::gemm(ta, tb, m, n, k, 2.0, a.data(), ta ? m : k, b.data(), tb ? k : n, 0.25, c.data(), n);
      for (int i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(c_ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("avx2 gemm agrees with scalar reference on ragged shapes") {
  if (!avx2_available()) return;
  Rng rng(7);
  const int shapes[][3] = {{1, 1, 1}, {6, 16, 8}, {7, 17, 3}, {13, 45, 300}, {64, 33, 257}, {5, 4000, 27}};
  for (const auto& s : shapes) {
    for (bool ta : {false, true}) {
      for (bool tb : {false, true}) {
        const int m = s[0], n = s[1], k = s[2];
        auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
        auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
        auto c0 = random_vec(static_cast<std::size_t>(m) * n, rng);
        auto c_scalar = c0, c_avx = c0;
        simd::scalar::gemm(ta, tb, m, n, k, 0.5f, a.data(), ta ? m : k, b.data(), tb ? k : n, 1.0f,
                           c_scalar.data(), n);
        {
          simd::ScopedBackend use(simd::Backend::Avx2);
          simd::gemm(ta, tb, m, n, k, 0.5f, a.data(), ta ? m : k, b.data(), tb ? k : n, 1.0f,
                     c_avx.data(), n);
        }
        for (std::size_t i = 0; i < c0.size(); ++i) {
          CHECK(std::abs(c_avx[i] - c_scalar[i]) <= 1e-5f * (1.0f + std::sqrt(float(k))));
        }
      }
    }
  }
}

TEST_CASE("gemm with beta zero ignores NaN in the output") {
  std::vector<float> a{1, 2}, b{3, 4}, c{NAN};
  simd::gemm(false, false, 1, 1, 2, 1.0f, a.data(), 2, b.data(), 1, 0.0f, c.data(), 1);
  CHECK(c[0] == 11.0f);
}

TEST_CASE("gemm column chunks are bitwise identical to one call") {
  Rng rng(3);
  const int m = 11, n = 301, k = 263;
  auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
  for (auto backend : {simd::Backend::Scalar, simd::Backend::Avx2}) {
    if (!simd::backend_supported(backend)) continue;
    simd::ScopedBackend use(backend);
    std::vector<float> full(m * n), chunked(m * n);
    simd::gemm(false, false, m, n, k, 1.0f, a.data(), k, b.data(), n, 0.0f, full.data(), n);
    for (int j0 = 0; j0 < n; j0 += 37) {
      const int w = std::min(37, n - j0);
      simd::gemm(false, false, m, w, k, 1.0f, a.data(), k, b.data() + j0, n, 0.0f, chunked.data() + j0, n);
    }
    CHECK(full == chunked);
  }
}

TEST_CASE("elementwise kernels: avx2 equals scalar") {
  if (!avx2_available()) return;
  Rng rng(11);
  for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 1000u, 1027u}) {
    auto x = random_vec(n, rng), dy = random_vec(n, rng), y0 = random_vec(n, rng);
    std::vector<float> ys(n), ya(n);
    auto dxs = y0, dxa = y0, axs = y0, axa = y0;

    simd::scalar::relu_forward(n, x.data(), ys.data());
    simd::scalar::relu_backward(n, x.data(), dy.data(), dxs.data());
    simd::scalar::axpy(n, 0.75f, x.data(), axs.data());
    std::vector<float> ss(n), sa(n);
    simd::scalar::scale_shift(n, x.data(), 1.5f, -0.25f, ss.data());
    const double sum_s = simd::scalar::sum(n, x.data());
    const double ssd_s = simd::scalar::sum_squared_deviation(n, x.data(), 0.1);
    const double dot_s = simd::scalar::dot(n, x.data(), dy.data());

    simd::ScopedBackend use(simd::Backend::Avx2);
    simd::relu_forward(n, x.data(), ya.data());
    simd::relu_backward(n, x.data(), dy.data(), dxa.data());
    simd::axpy(n, 0.75f, x.data(), axa.data());
    simd::scale_shift(n, x.data(), 1.5f, -0.25f, sa.data());

    CHECK(ys == ya);
    CHECK(dxs == dxa);
    CHECK(ss == sa);
    for (std::size_t i = 0; i < n; ++i) CHECK(axa[i] == doctest::Approx(axs[i]).epsilon(1e-6));
    CHECK(simd::sum(n, x.data()) == doctest::Approx(sum_s).epsilon(1e-12));
    CHECK(simd::sum_squared_deviation(n, x.data(), 0.1) == doctest::Approx(ssd_s).epsilon(1e-12));
    CHECK(simd::dot(n, x.data(), dy.data()) == doctest::Approx(dot_s).epsilon(1e-12));
  }
}

TEST_CASE("backend override round-trips") {
  const auto before = simd::active_backend();
  {
    simd::ScopedBackend use(simd::Backend::Scalar);
    CHECK(simd::active_backend() == simd::Backend::Scalar);
  }
  CHECK(simd::active_backend() == before);
}
