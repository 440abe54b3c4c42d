#pragma once

// Layer primitives with hand-written backward passes.
//
// Batched activations use the channel-major layout [C, B, H, W]; a single
// image is the B = 1 case [C, H, W]. Convolutions lower to one GEMM over all
// samples through im2col.

#include <cstddef>
#include <string>
#include <vector>

#include "facereenact/rng.hpp"
#include "facereenact/tensor.hpp"

namespace facereenact::nn {

/// A named learnable tensor and its gradient accumulator. The accumulator is
/// allocated on first use so frozen or inference-only copies stay small.
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, Shape shape) : name(std::move(n)), value(std::move(shape)) {}

  Tensor<T>& ensure_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
  void zero_grad() { ensure_grad().fill(T(0)); }
  std::size_t size() const { return value.size(); }
};

template <class T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev);

struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_size(std::size_t in) const {
    if (in + 2 * pad < kernel) throw ShapeError("convolution input smaller than kernel");
    return (in + 2 * pad - kernel) / stride + 1;
  }
  std::size_t patch() const { return in_channels * kernel * kernel; }
};

/// col[(c*k+ki)*k+kj, (b*Ho+oh)*Wo+ow] = x[c, b, oh*s-p+ki, ow*s-p+kj] (0 outside).
template <class T>
void im2col(const T* x, std::size_t batch, std::size_t h, std::size_t w, const ConvGeometry& g,
            T* col);

/// Adjoint of im2col: accumulates col back into dx (which must be zeroed by the caller).
template <class T>
void col2im(const T* col, std::size_t batch, std::size_t h, std::size_t w, const ConvGeometry& g,
            T* dx);

/// Saved forward state for Conv2d::backward.
template <class T>
struct ConvCache {
  Tensor<T> col;  // empty for 1x1 / stride 1 / pad 0, where col == input
  Tensor<T> input;
  std::size_t batch = 0, h = 0, w = 0;
};

/// Standard 2-D convolution with optional bias; weight stored as [out, in*k*k].
template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, ConvGeometry geometry, bool bias);

  const ConvGeometry& geometry() const { return geometry_; }
  Param<T>& weight() { return weight_; }
  const Param<T>& weight() const { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& bias() const { return bias_; }
  bool has_bias() const { return has_bias_; }

  /// Weights ~ N(0, gain^2 / fan_in); bias set to zero.
  void init_fan_in(Rng& rng, double gain = 1.0);

  /// x: [in, B, H, W] -> [out, B, Ho, Wo].
  Tensor<T> forward(const Tensor<T>& x, std::size_t batch, std::size_t h, std::size_t w,
                    ConvCache<T>* cache) const;

  /// Accumulates parameter gradients (when requested) and returns dx when need_dx.
  Tensor<T> backward(const ConvCache<T>& cache, const Tensor<T>& dy, bool need_dx,
                     bool accumulate_param_grads = true);
  /// dx only; leaves parameter gradients alone.
  Tensor<T> backward_input(const ConvCache<T>& cache, const Tensor<T>& dy) const;

  std::vector<Param<T>*> params();

 private:
  ConvGeometry geometry_;
  bool has_bias_ = false;
  Param<T> weight_;
  Param<T> bias_;
};

template <class T>
void leaky_relu_forward(Tensor<T>& x, T slope);
/// dy *= (y > 0 ? 1 : slope), using the activation output y.
template <class T>
void leaky_relu_backward(const Tensor<T>& y, T slope, Tensor<T>& dy);

/// Adaptive average pooling [C, H, W] -> [C, oh, ow] with the usual
/// floor/ceil bin edges, so it works for inputs smaller than the output.
template <class T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, std::size_t oh, std::size_t ow);
template <class T>
Tensor<T> adaptive_avg_pool_backward(const Tensor<T>& dy, std::size_t h, std::size_t w);

/// Nearest-neighbour 2x upsampling of [C, H, W].
template <class T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x);
template <class T>
Tensor<T> upsample_nearest2x_backward(const Tensor<T>& dy);

/// Bilinear 2x upsampling of [C, H, W] with half-pixel centres and edge clamping.
template <class T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x);
template <class T>
Tensor<T> upsample_bilinear2x_backward(const Tensor<T>& dy);

}  // namespace facereenact::nn
