// AVX2 + FMA kernels. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after the runtime check in dispatch.cpp.

#include "facereenact/kernels.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <memory>

namespace facereenact::kernels::avx2 {

namespace {

template <class T>
struct Simd;

template <>
struct Simd<float> {
  using Reg = __m256;
  static constexpr std::size_t kWidth = 8;
  static Reg zero() { return _mm256_setzero_ps(); }
  static Reg set1(float x) { return _mm256_set1_ps(x); }
  static Reg load(const float* p) { return _mm256_loadu_ps(p); }
  static Reg load_aligned(const float* p) { return _mm256_load_ps(p); }
  static void store(float* p, Reg r) { _mm256_storeu_ps(p, r); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_ps(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_ps(a, b); }
  static Reg sub(Reg a, Reg b) { return _mm256_sub_ps(a, b); }
  static Reg mul(Reg a, Reg b) { return _mm256_mul_ps(a, b); }
  static Reg div(Reg a, Reg b) { return _mm256_div_ps(a, b); }
  static Reg sqrt(Reg a) { return _mm256_sqrt_ps(a); }
  static float hsum(Reg r) {
    __m128 lo = _mm256_castps256_ps128(r);
    __m128 hi = _mm256_extractf128_ps(r, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

template <>
struct Simd<double> {
  using Reg = __m256d;
  static constexpr std::size_t kWidth = 4;
  static Reg zero() { return _mm256_setzero_pd(); }
  static Reg set1(double x) { return _mm256_set1_pd(x); }
  static Reg load(const double* p) { return _mm256_loadu_pd(p); }
  static Reg load_aligned(const double* p) { return _mm256_load_pd(p); }
  static void store(double* p, Reg r) { _mm256_storeu_pd(p, r); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_pd(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_pd(a, b); }
  static Reg sub(Reg a, Reg b) { return _mm256_sub_pd(a, b); }
  static Reg mul(Reg a, Reg b) { return _mm256_mul_pd(a, b); }
  static Reg div(Reg a, Reg b) { return _mm256_div_pd(a, b); }
  static Reg sqrt(Reg a) { return _mm256_sqrt_pd(a); }
  static double hsum(Reg r) {
    __m128d lo = _mm256_castpd256_pd128(r);
    __m128d hi = _mm256_extractf128_pd(r, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
  }
};

// Blocking parameters. MR x NR is the register tile of the micro-kernel:
// 6 rows x 2 vector registers leaves room for the B loads and the broadcast.
constexpr std::size_t kMr = 6;
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 96;
constexpr std::size_t kNc = 2048;

struct AlignedFree {
  void operator()(void* p) const { std::free(p); }
};

template <class T>
std::unique_ptr<T[], AlignedFree> aligned_buffer(std::size_t count) {
  const std::size_t bytes = ((count * sizeof(T) + 63) / 64) * 64;
  return std::unique_ptr<T[], AlignedFree>(static_cast<T*>(std::aligned_alloc(64, bytes)));
}

// Packs an mc x kc block of op(A) into row panels of kMr, zero-padded.
template <class T>
void pack_a(bool trans, const T* a, std::size_t lda, std::size_t row0, std::size_t col0,
            std::size_t mc, std::size_t kc, T* out) {
  for (std::size_t ir = 0; ir < mc; ir += kMr) {
    const std::size_t rows = std::min(kMr, mc - ir);
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t r = 0; r < kMr; ++r) {
        T value = T(0);
        if (r < rows) {
          const std::size_t i = row0 + ir + r;
          const std::size_t kk = col0 + p;
          value = trans ? a[kk * lda + i] : a[i * lda + kk];
        }
        *out++ = value;
      }
    }
  }
}

// Packs a kc x nc block of op(B) into column panels of nr, zero-padded.
template <class T>
void pack_b(bool trans, const T* b, std::size_t ldb, std::size_t row0, std::size_t col0,
            std::size_t kc, std::size_t nc, std::size_t nr, T* out) {
  for (std::size_t jr = 0; jr < nc; jr += nr) {
    const std::size_t cols = std::min(nr, nc - jr);
    if (!trans && cols == nr) {
      for (std::size_t p = 0; p < kc; ++p) {
        const T* src = b + (row0 + p) * ldb + col0 + jr;
        std::copy(src, src + nr, out);
        out += nr;
      }
      continue;
    }
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t c = 0; c < nr; ++c) {
        T value = T(0);
        if (c < cols) {
          const std::size_t kk = row0 + p;
          const std::size_t j = col0 + jr + c;
          value = trans ? b[j * ldb + kk] : b[kk * ldb + j];
        }
        *out++ = value;
      }
    }
  }
}

// C[rows x cols] += alpha * Apanel * Bpanel, with the full kMr x NR tile
// computed in registers.
template <class T>
void micro_kernel(std::size_t kc, const T* a, const T* b, T alpha, T* c, std::size_t ldc,
                  std::size_t rows, std::size_t cols) {
  using S = Simd<T>;
  constexpr std::size_t W = S::kWidth;
  constexpr std::size_t NR = 2 * W;
  typename S::Reg acc[kMr][2];
  for (std::size_t r = 0; r < kMr; ++r) {
    acc[r][0] = S::zero();
    acc[r][1] = S::zero();
  }
  for (std::size_t p = 0; p < kc; ++p) {
    const typename S::Reg b0 = S::load_aligned(b + p * NR);
    const typename S::Reg b1 = S::load_aligned(b + p * NR + W);
    const T* ap = a + p * kMr;
    for (std::size_t r = 0; r < kMr; ++r) {
      const typename S::Reg av = S::set1(ap[r]);
      acc[r][0] = S::fmadd(av, b0, acc[r][0]);
      acc[r][1] = S::fmadd(av, b1, acc[r][1]);
    }
  }
  const typename S::Reg alpha_v = S::set1(alpha);
  if (rows == kMr && cols == NR) {
    for (std::size_t r = 0; r < kMr; ++r) {
      T* row = c + r * ldc;
      S::store(row, S::fmadd(alpha_v, acc[r][0], S::load(row)));
      S::store(row + W, S::fmadd(alpha_v, acc[r][1], S::load(row + W)));
    }
    return;
  }
  alignas(64) T tile[kMr * NR];
  for (std::size_t r = 0; r < kMr; ++r) {
    S::store(tile + r * NR, acc[r][0]);
    S::store(tile + r * NR + W, acc[r][1]);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) c[r * ldc + j] += alpha * tile[r * NR + j];
  }
}

template <class T>
void gemm_impl(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
               const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
               std::size_t ldc) {
  constexpr std::size_t NR = 2 * Simd<T>::kWidth;
  for (std::size_t i = 0; i < m; ++i) {
    T* row = c + i * ldc;
    if (beta == T(0)) {
      std::fill(row, row + n, T(0));
    } else if (beta != T(1)) {
      for (std::size_t j = 0; j < n; ++j) row[j] *= beta;
    }
  }
  if (m == 0 || n == 0 || k == 0 || alpha == T(0)) return;

  // Packing buffers are reused across calls on the same thread.
  thread_local auto packed_a = aligned_buffer<T>(kMc * kKc);
  thread_local auto packed_b = aligned_buffer<T>(kKc * (kNc + NR));
  for (std::size_t jc = 0; jc < n; jc += kNc) {
    const std::size_t nc = std::min(kNc, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKc) {
      const std::size_t kc = std::min(kKc, k - pc);
      pack_b(trans_b, b, ldb, pc, jc, kc, nc, NR, packed_b.get());
      for (std::size_t ic = 0; ic < m; ic += kMc) {
        const std::size_t mc = std::min(kMc, m - ic);
        pack_a(trans_a, a, lda, ic, pc, mc, kc, packed_a.get());
        for (std::size_t jr = 0; jr < nc; jr += NR) {
          const std::size_t cols = std::min(NR, nc - jr);
          const T* bp = packed_b.get() + jr * kc;
          for (std::size_t ir = 0; ir < mc; ir += kMr) {
            const std::size_t rows = std::min(kMr, mc - ir);
            micro_kernel<T>(kc, packed_a.get() + ir * kc, bp, alpha,
                            c + (ic + ir) * ldc + jc + jr, ldc, rows, cols);
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc) {
  gemm_impl<T>(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  using S = Simd<T>;
  const typename S::Reg av = S::set1(alpha);
  std::size_t i = 0;
  for (; i + S::kWidth <= n; i += S::kWidth) {
    S::store(y + i, S::fmadd(av, S::load(x + i), S::load(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
  using S = Simd<T>;
  typename S::Reg acc0 = S::zero();
  typename S::Reg acc1 = S::zero();
  std::size_t i = 0;
  for (; i + 2 * S::kWidth <= n; i += 2 * S::kWidth) {
    acc0 = S::fmadd(S::load(x + i), S::load(y + i), acc0);
    acc1 = S::fmadd(S::load(x + i + S::kWidth), S::load(y + i + S::kWidth), acc1);
  }
  for (; i + S::kWidth <= n; i += S::kWidth) {
    acc0 = S::fmadd(S::load(x + i), S::load(y + i), acc0);
  }
  T sum = S::hsum(S::add(acc0, acc1));
  for (; i < n; ++i) sum += x[i] * y[i];
  return sum;
}

template <class T>
void scale_by_offset(std::size_t n, const T* base, const T* delta, T* out) {
  using S = Simd<T>;
  const typename S::Reg one = S::set1(T(1));
  std::size_t i = 0;
  for (; i + S::kWidth <= n; i += S::kWidth) {
    S::store(out + i, S::mul(S::load(base + i), S::add(one, S::load(delta + i))));
  }
  for (; i < n; ++i) out[i] = base[i] * (T(1) + delta[i]);
}

template <class T>
void adam_update(std::size_t n, T* param, const T* grad, T* m, T* v, T lr, T beta1, T beta2,
                 T eps, T bias1, T bias2) {
  using S = Simd<T>;
  const typename S::Reg b1 = S::set1(beta1);
  const typename S::Reg b2 = S::set1(beta2);
  const typename S::Reg omb1 = S::set1(T(1) - beta1);
  const typename S::Reg omb2 = S::set1(T(1) - beta2);
  const typename S::Reg inv_bias1 = S::set1(T(1) / bias1);
  const typename S::Reg inv_bias2 = S::set1(T(1) / bias2);
  const typename S::Reg lr_v = S::set1(lr);
  const typename S::Reg eps_v = S::set1(eps);
  std::size_t i = 0;
  for (; i + S::kWidth <= n; i += S::kWidth) {
    const typename S::Reg g = S::load(grad + i);
    const typename S::Reg mi = S::add(S::mul(b1, S::load(m + i)), S::mul(omb1, g));
    const typename S::Reg vi = S::add(S::mul(b2, S::load(v + i)), S::mul(omb2, S::mul(g, g)));
    S::store(m + i, mi);
    S::store(v + i, vi);
    const typename S::Reg denom = S::add(S::sqrt(S::mul(vi, inv_bias2)), eps_v);
    const typename S::Reg step = S::div(S::mul(lr_v, S::mul(mi, inv_bias1)), denom);
    S::store(param + i, S::sub(S::load(param + i), step));
  }
  for (; i < n; ++i) {
    const T g = grad[i];
    m[i] = beta1 * m[i] + (T(1) - beta1) * g;
    v[i] = beta2 * v[i] + (T(1) - beta2) * (g * g);
    param[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
  }
}

#define FACEREENACT_INSTANTIATE_AVX2(T)                                                     \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, T, const T*,     \
                        std::size_t, const T*, std::size_t, T, T*, std::size_t);             \
  template void axpy<T>(std::size_t, T, const T*, T*);                                       \
  template T dot<T>(std::size_t, const T*, const T*);                                        \
  template void scale_by_offset<T>(std::size_t, const T*, const T*, T*);                     \
  template void adam_update<T>(std::size_t, T*, const T*, T*, T*, T, T, T, T, T, T);

FACEREENACT_INSTANTIATE_AVX2(float)
FACEREENACT_INSTANTIATE_AVX2(double)

#undef FACEREENACT_INSTANTIATE_AVX2

}  // namespace facereenact::kernels::avx2
