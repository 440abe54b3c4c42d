#pragma once

// Dense arithmetic kernels used by every layer of the pipeline.
//
// Each kernel has a portable reference implementation (`*_ref`) and, on x86-64,
// an AVX2+FMA variant (`*_avx2`). The public entry points dispatch at runtime on
// the active ISA, which defaults to the best one the CPU supports. Setting the
// environment variable FACEREENACT_ISA=scalar (or calling set_isa) forces the
// reference path; results across ISAs agree to rounding, not bitwise.

#include <cstddef>
#include <string_view>

namespace facereenact::kernels {

enum class Isa { Scalar, Avx2 };

Isa detected_isa();
Isa active_isa();
void set_isa(Isa isa);
std::string_view isa_name(Isa isa);

/// Scoped ISA override, restores the previous selection on destruction.
class IsaScope {
 public:
  explicit IsaScope(Isa isa) : saved_(active_isa()) { set_isa(isa); }
  ~IsaScope() { set_isa(saved_); }
  IsaScope(const IsaScope&) = delete;
  IsaScope& operator=(const IsaScope&) = delete;

 private:
  Isa saved_;
};

/// Row-major C[m x n] = alpha * op(A) * op(B) + beta * C.
/// op(A) is m x k, op(B) is k x n. When beta == 0, C is not read.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc);

/// y += alpha * x
template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y);

template <class T>
T dot(std::size_t n, const T* x, const T* y);

/// out = base * (1 + delta)
template <class T>
void scale_by_offset(std::size_t n, const T* base, const T* delta, T* out);

/// One Adam step over a flat parameter block. bias1 = 1 - beta1^t, bias2 = 1 - beta2^t.
template <class T>
void adam_update(std::size_t n, T* param, const T* grad, T* m, T* v, T lr, T beta1, T beta2,
                 T eps, T bias1, T bias2);

namespace ref {
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc);
template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
template <class T>
T dot(std::size_t n, const T* x, const T* y);
template <class T>
void scale_by_offset(std::size_t n, const T* base, const T* delta, T* out);
template <class T>
void adam_update(std::size_t n, T* param, const T* grad, T* m, T* v, T lr, T beta1, T beta2,
                 T eps, T bias1, T bias2);
}  // namespace ref

#if defined(__x86_64__) || defined(_M_X64)
#define FACEREENACT_HAVE_AVX2_KERNELS 1
namespace avx2 {
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc);
template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
template <class T>
T dot(std::size_t n, const T* x, const T* y);
template <class T>
void scale_by_offset(std::size_t n, const T* base, const T* delta, T* out);
template <class T>
void adam_update(std::size_t n, T* param, const T* grad, T* m, T* v, T lr, T beta1, T beta2,
                 T eps, T bias1, T bias2);
}  // namespace avx2
#else
#define FACEREENACT_HAVE_AVX2_KERNELS 0
#endif

}  // namespace facereenact::kernels
