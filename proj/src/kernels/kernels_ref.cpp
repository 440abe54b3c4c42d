#include "facereenact/kernels.hpp"

#include <cmath>

namespace facereenact::kernels::ref {

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc) {
  auto a_at = [&](std::size_t i, std::size_t p) {
    return trans_a ? a[p * lda + i] : a[i * lda + p];
  };
  for (std::size_t i = 0; i < m; ++i) {
    T* c_row = c + i * ldc;
    if (beta == T(0)) {
      for (std::size_t j = 0; j < n; ++j) c_row[j] = T(0);
    } else if (beta != T(1)) {
      for (std::size_t j = 0; j < n; ++j) c_row[j] *= beta;
    }
    if (!trans_b) {
      for (std::size_t p = 0; p < k; ++p) {
        const T scaled = alpha * a_at(i, p);
        const T* b_row = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) c_row[j] += scaled * b_row[j];
      }
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        const T* b_col = b + j * ldb;
        T sum = T(0);
        for (std::size_t p = 0; p < k; ++p) sum += a_at(i, p) * b_col[p];
        c_row[j] += alpha * sum;
      }
    }
  }
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
  T sum = T(0);
  for (std::size_t i = 0; i < n; ++i) sum += x[i] * y[i];
  return sum;
}

template <class T>
void scale_by_offset(std::size_t n, const T* base, const T* delta, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = base[i] * (T(1) + delta[i]);
}

template <class T>
void adam_update(std::size_t n, T* param, const T* grad, T* m, T* v, T lr, T beta1, T beta2,
                 T eps, T bias1, T bias2) {
  const T one_minus_b1 = T(1) - beta1;
  const T one_minus_b2 = T(1) - beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const T g = grad[i];
    m[i] = beta1 * m[i] + one_minus_b1 * g;
    v[i] = beta2 * v[i] + one_minus_b2 * (g * g);
    const T m_hat = m[i] / bias1;
    const T v_hat = v[i] / bias2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

#define FACEREENACT_INSTANTIATE_REF(T)                                                      \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, T, const T*,     \
                        std::size_t, const T*, std::size_t, T, T*, std::size_t);             \
  template void axpy<T>(std::size_t, T, const T*, T*);                                       \
  template T dot<T>(std::size_t, const T*, const T*);                                        \
  template void scale_by_offset<T>(std::size_t, const T*, const T*, T*);                     \
  template void adam_update<T>(std::size_t, T*, const T*, T*, T*, T, T, T, T, T, T);

FACEREENACT_INSTANTIATE_REF(float)
FACEREENACT_INSTANTIATE_REF(double)

#undef FACEREENACT_INSTANTIATE_REF

}  // namespace facereenact::kernels::ref
