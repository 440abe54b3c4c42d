#include <atomic>
#include <cstdlib>
#include <string>

#include "facereenact/kernels.hpp"

namespace facereenact::kernels {

namespace {

Isa initial_isa() {
  const Isa best = detected_isa();
  if (const char* env = std::getenv("FACEREENACT_ISA")) {
    const std::string value(env);
    if (value == "scalar" || value == "ref") return Isa::Scalar;
  }
  return best;
}

std::atomic<Isa>& isa_slot() {
  static std::atomic<Isa> slot{initial_isa()};
  return slot;
}

}  // namespace

Isa detected_isa() {
#if FACEREENACT_HAVE_AVX2_KERNELS && (defined(__GNUC__) || defined(__clang__))
  static const bool has_avx2 = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  if (has_avx2) return Isa::Avx2;
#endif
  return Isa::Scalar;
}

Isa active_isa() { return isa_slot().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (isa == Isa::Avx2 && detected_isa() != Isa::Avx2) isa = Isa::Scalar;
  isa_slot().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
  }
  return "unknown";
}

#if FACEREENACT_HAVE_AVX2_KERNELS
#define FACEREENACT_DISPATCH(call) \
  (active_isa() == Isa::Avx2 ? avx2::call : ref::call)
#else
#define FACEREENACT_DISPATCH(call) (ref::call)
#endif

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc) {
  FACEREENACT_DISPATCH(gemm<T>(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc));
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  FACEREENACT_DISPATCH(axpy<T>(n, alpha, x, y));
}

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
  return FACEREENACT_DISPATCH(dot<T>(n, x, y));
}

template <class T>
void scale_by_offset(std::size_t n, const T* base, const T* delta, T* out) {
  FACEREENACT_DISPATCH(scale_by_offset<T>(n, base, delta, out));
}

template <class T>
void adam_update(std::size_t n, T* param, const T* grad, T* m, T* v, T lr, T beta1, T beta2,
                 T eps, T bias1, T bias2) {
  FACEREENACT_DISPATCH(adam_update<T>(n, param, grad, m, v, lr, beta1, beta2, eps, bias1, bias2));
}

#undef FACEREENACT_DISPATCH

#define FACEREENACT_INSTANTIATE(T)                                                          \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, T, const T*,     \
                        std::size_t, const T*, std::size_t, T, T*, std::size_t);             \
  template void axpy<T>(std::size_t, T, const T*, T*);                                       \
  template T dot<T>(std::size_t, const T*, const T*);                                        \
  template void scale_by_offset<T>(std::size_t, const T*, const T*, T*);                     \
  template void adam_update<T>(std::size_t, T*, const T*, T*, T*, T, T, T, T, T, T);

FACEREENACT_INSTANTIATE(float)
FACEREENACT_INSTANTIATE(double)

#undef FACEREENACT_INSTANTIATE

}  // namespace facereenact::kernels
