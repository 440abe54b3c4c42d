#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "facereenact/kernels.hpp"
#include "facereenact/rng.hpp"

using namespace facereenact;

namespace {

template <class T>
std::vector<T> random_vector(std::size_t n, Rng& rng) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return v;
}

// Plain triple loop, independent of both kernel implementations.
template <class T>
void naive_gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, T alpha,
                const std::vector<T>& a, std::size_t lda, const std::vector<T>& b, std::size_t ldb,
                T beta, std::vector<T>& c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta ? a[p * lda + i] : a[i * lda + p];
        const double bv = tb ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      const double prev = beta == T(0) ? 0.0 : static_cast<double>(beta) * c[i * ldc + j];
      c[i * ldc + j] = static_cast<T>(alpha * acc + prev);
    }
  }
}

template <class T>
void check_gemm_variants(double tol) {
  Rng rng(11);
  const std::size_t shapes[][3] = {{1, 1, 1}, {7, 13, 5}, {37, 65, 300}, {96, 17, 257}, {6, 2049, 3}};
  for (const auto& s : shapes) {
    const std::size_t m = s[0], n = s[1], k = s[2];
    for (int mode = 0; mode < 4; ++mode) {
      const bool ta = mode & 1, tb = mode & 2;
      const std::size_t lda = ta ? m : k, ldb = tb ? k : n;
      auto a = random_vector<T>(m * k, rng);
      auto b = random_vector<T>(k * n, rng);
      auto c0 = random_vector<T>(m * n, rng);
      for (T beta : {T(0), T(0.5)}) {
        auto expect = c0, got_ref = c0;
        naive_gemm<T>(ta, tb, m, n, k, T(1.5), a, lda, b, ldb, beta, expect, n);
        kernels::ref::gemm<T>(ta, tb, m, n, k, T(1.5), a.data(), lda, b.data(), ldb, beta,
                              got_ref.data(), n);
        for (std::size_t i = 0; i < expect.size(); ++i) CHECK(got_ref[i] == doctest::Approx(expect[i]).epsilon(tol));
#if FACEREENACT_HAVE_AVX2_KERNELS
        if (kernels::detected_isa() == kernels::Isa::Avx2) {
          auto got_simd = c0;
          kernels::avx2::gemm<T>(ta, tb, m, n, k, T(1.5), a.data(), lda, b.data(), ldb, beta,
                                 got_simd.data(), n);
          for (std::size_t i = 0; i < expect.size(); ++i) {
            CHECK(got_simd[i] == doctest::Approx(got_ref[i]).epsilon(tol));
          }
        }
#endif
      }
    }
  }
}

}  // namespace

TEST_CASE("gemm agrees with a naive loop on every transpose mode") {
  check_gemm_variants<float>(1e-4);
  check_gemm_variants<double>(1e-12);
}

TEST_CASE("gemm with beta zero ignores garbage in C") {
  std::vector<float> a{1, 2, 3, 4}, b{1, 0, 0, 1}, c(4, std::numeric_limits<float>::quiet_NaN());
  kernels::gemm<float>(false, false, 2, 2, 2, 1.0f, a.data(), 2, b.data(), 2, 0.0f, c.data(), 2);
  CHECK(c == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("vector kernels match between reference and SIMD paths") {
  Rng rng(5);
  for (std::size_t n : {0u, 1u, 7u, 8u, 31u, 1000u}) {
    auto x = random_vector<double>(n, rng), y = random_vector<double>(n, rng);
    auto y_ref = y;
    kernels::ref::axpy<double>(n, 0.25, x.data(), y_ref.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(y_ref[i] == doctest::Approx(y[i] + 0.25 * x[i]));
    const double d = kernels::ref::dot<double>(n, x.data(), y.data());
    std::vector<double> scaled(n);
    kernels::ref::scale_by_offset<double>(n, x.data(), y.data(), scaled.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(scaled[i] == doctest::Approx(x[i] * (1 + y[i])));
#if FACEREENACT_HAVE_AVX2_KERNELS
    if (kernels::detected_isa() == kernels::Isa::Avx2) {
      auto y_simd = y;
      kernels::avx2::axpy<double>(n, 0.25, x.data(), y_simd.data());
      for (std::size_t i = 0; i < n; ++i) CHECK(y_simd[i] == doctest::Approx(y_ref[i]));
      CHECK(kernels::avx2::dot<double>(n, x.data(), y.data()) == doctest::Approx(d));
      std::vector<double> s2(n);
      kernels::avx2::scale_by_offset<double>(n, x.data(), y.data(), s2.data());
      // Elementwise product is exact in both paths.
      CHECK(s2 == scaled);
    }
#endif
  }
}

TEST_CASE("adam update matches the closed form and both paths agree") {
  Rng rng(9);
  const std::size_t n = 37;
  auto p = random_vector<float>(n, rng), g = random_vector<float>(n, rng);
  std::vector<float> m(n, 0.0f), v(n, 0.0f);
  auto p_ref = p, m_ref = m, v_ref = v;
  const float lr = 1e-2f, b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
  kernels::ref::adam_update<float>(n, p_ref.data(), g.data(), m_ref.data(), v_ref.data(), lr, b1, b2,
                                   eps, 1 - b1, 1 - b2);
  for (std::size_t i = 0; i < n; ++i) {
    // First step: m_hat = g, v_hat = g^2, so the step is lr * sign(g) up to eps.
    const double expect = p[i] - lr * g[i] / (std::abs(g[i]) + eps);
    CHECK(p_ref[i] == doctest::Approx(expect).epsilon(1e-5));
  }
#if FACEREENACT_HAVE_AVX2_KERNELS
  if (kernels::detected_isa() == kernels::Isa::Avx2) {
    auto p_simd = p, m_simd = m, v_simd = v;
    kernels::avx2::adam_update<float>(n, p_simd.data(), g.data(), m_simd.data(), v_simd.data(), lr,
                                      b1, b2, eps, 1 - b1, 1 - b2);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(p_simd[i] == doctest::Approx(p_ref[i]).epsilon(1e-6));
      CHECK(m_simd[i] == doctest::Approx(m_ref[i]).epsilon(1e-6));
      CHECK(v_simd[i] == doctest::Approx(v_ref[i]).epsilon(1e-6));
    }
  }
#endif
}

TEST_CASE("isa scope forces and restores the active path") {
  const auto before = kernels::active_isa();
  {
    kernels::IsaScope scope(kernels::Isa::Scalar);
    CHECK(kernels::active_isa() == kernels::Isa::Scalar);
  }
  CHECK(kernels::active_isa() == before);
}
