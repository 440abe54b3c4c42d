#include "facereenact/nn.hpp"

#include <algorithm>
#include <cmath>

#include "facereenact/kernels.hpp"

namespace facereenact::nn {

template <class T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev) {
  for (auto& x : t.values()) x = static_cast<T>(rng.normal() * stddev);
}

template <class T>
void im2col(const T* x, std::size_t batch, std::size_t h, std::size_t w, const ConvGeometry& g,
            T* col) {
  const std::size_t oh = g.out_size(h);
  const std::size_t ow = g.out_size(w);
  const std::size_t n = batch * oh * ow;
  const std::size_t k = g.kernel;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = col + ((c * k + ki) * k + kj) * n;
        for (std::size_t b = 0; b < batch; ++b) {
          const T* plane = x + (c * batch + b) * h * w;
          for (std::size_t y = 0; y < oh; ++y) {
            const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.pad);
            T* out = row + (b * oh + y) * ow;
            if (iy < 0 || iy >= static_cast<long>(h)) {
              std::fill(out, out + ow, T(0));
              continue;
            }
            const T* src = plane + static_cast<std::size_t>(iy) * w;
            for (std::size_t xo = 0; xo < ow; ++xo) {
              const long ix = static_cast<long>(xo * g.stride + kj) - static_cast<long>(g.pad);
              out[xo] = (ix < 0 || ix >= static_cast<long>(w)) ? T(0)
                                                               : src[static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, std::size_t batch, std::size_t h, std::size_t w, const ConvGeometry& g,
            T* dx) {
  const std::size_t oh = g.out_size(h);
  const std::size_t ow = g.out_size(w);
  const std::size_t n = batch * oh * ow;
  const std::size_t k = g.kernel;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = col + ((c * k + ki) * k + kj) * n;
        for (std::size_t b = 0; b < batch; ++b) {
          T* plane = dx + (c * batch + b) * h * w;
          for (std::size_t y = 0; y < oh; ++y) {
            const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            const T* src = row + (b * oh + y) * ow;
            T* dst = plane + static_cast<std::size_t>(iy) * w;
            for (std::size_t xo = 0; xo < ow; ++xo) {
              const long ix = static_cast<long>(xo * g.stride + kj) - static_cast<long>(g.pad);
              if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[xo];
            }
          }
        }
      }
    }
  }
}

template <class T>
Conv2d<T>::Conv2d(const std::string& name, ConvGeometry geometry, bool bias)
    : geometry_(geometry),
      has_bias_(bias),
      weight_(name + ".weight", {geometry.out_channels, geometry.patch()}),
      bias_(name + ".bias", {bias ? geometry.out_channels : 0}) {}

template <class T>
void Conv2d<T>::init_fan_in(Rng& rng, double gain) {
  fill_normal(weight_.value, rng, gain / std::sqrt(static_cast<double>(geometry_.patch())));
  bias_.value.fill(T(0));
}

template <class T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, std::size_t batch, std::size_t h, std::size_t w,
                             ConvCache<T>* cache) const {
  const ConvGeometry& g = geometry_;
  if (x.size() != g.in_channels * batch * h * w) {
    throw ShapeError("conv " + weight_.name + ": input " + shape_string(x.shape()) +
                     " does not match " + std::to_string(g.in_channels) + " channels x " +
                     std::to_string(batch) + " x " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t oh = g.out_size(h);
  const std::size_t ow = g.out_size(w);
  const std::size_t n = batch * oh * ow;
  const bool pointwise = g.kernel == 1 && g.stride == 1 && g.pad == 0;

  Tensor<T> local_col;
  Tensor<T>* col = cache ? &cache->col : &local_col;
  const T* col_ptr = x.data();
  if (!pointwise) {
    *col = Tensor<T>({g.patch(), n});
    im2col(x.data(), batch, h, w, g, col->data());
    col_ptr = col->data();
  } else if (cache) {
    cache->input = x;
  }
  if (cache) {
    cache->batch = batch;
    cache->h = h;
    cache->w = w;
  }

  Tensor<T> y({g.out_channels, batch, oh, ow});
  kernels::gemm<T>(false, false, g.out_channels, n, g.patch(), T(1), weight_.value.data(),
                   g.patch(), col_ptr, n, T(0), y.data(), n);
  if (has_bias_) {
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      const T b = bias_.value[o];
      T* row = y.data() + o * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += b;
    }
  }
  return y;
}

template <class T>
Tensor<T> Conv2d<T>::backward(const ConvCache<T>& cache, const Tensor<T>& dy, bool need_dx,
                              bool accumulate_param_grads) {
  const ConvGeometry& g = geometry_;
  const std::size_t oh = g.out_size(cache.h);
  const std::size_t ow = g.out_size(cache.w);
  const std::size_t n = cache.batch * oh * ow;
  if (dy.size() != g.out_channels * n) throw ShapeError("conv " + weight_.name + ": bad dy");
  const bool pointwise = g.kernel == 1 && g.stride == 1 && g.pad == 0;
  const T* col_ptr = pointwise ? cache.input.data() : cache.col.data();

  if (accumulate_param_grads) {
    weight_.ensure_grad();
    if (has_bias_) bias_.ensure_grad();
    kernels::gemm<T>(false, true, g.out_channels, g.patch(), n, T(1), dy.data(), n, col_ptr, n,
                     T(1), weight_.grad.data(), g.patch());
    if (has_bias_) {
      for (std::size_t o = 0; o < g.out_channels; ++o) {
        const T* row = dy.data() + o * n;
        T sum = T(0);
        for (std::size_t j = 0; j < n; ++j) sum += row[j];
        bias_.grad[o] += sum;
      }
    }
  }
  if (!need_dx) return {};
  return backward_input(cache, dy);
}

template <class T>
Tensor<T> Conv2d<T>::backward_input(const ConvCache<T>& cache, const Tensor<T>& dy) const {
  const ConvGeometry& g = geometry_;
  const std::size_t n = cache.batch * g.out_size(cache.h) * g.out_size(cache.w);
  if (dy.size() != g.out_channels * n) throw ShapeError("conv " + weight_.name + ": bad dy");
  const bool pointwise = g.kernel == 1 && g.stride == 1 && g.pad == 0;
  Tensor<T> dx({g.in_channels, cache.batch, cache.h, cache.w});
  if (pointwise) {
    kernels::gemm<T>(true, false, g.patch(), n, g.out_channels, T(1), weight_.value.data(),
                     g.patch(), dy.data(), n, T(0), dx.data(), n);
    return dx;
  }
  Tensor<T> dcol({g.patch(), n});
  kernels::gemm<T>(true, false, g.patch(), n, g.out_channels, T(1), weight_.value.data(),
                   g.patch(), dy.data(), n, T(0), dcol.data(), n);
  col2im(dcol.data(), cache.batch, cache.h, cache.w, g, dx.data());
  return dx;
}

template <class T>
std::vector<Param<T>*> Conv2d<T>::params() {
  std::vector<Param<T>*> out{&weight_};
  if (has_bias_) out.push_back(&bias_);
  return out;
}

template <class T>
void leaky_relu_forward(Tensor<T>& x, T slope) {
  for (auto& v : x.values()) v = v > T(0) ? v : v * slope;
}

template <class T>
void leaky_relu_backward(const Tensor<T>& y, T slope, Tensor<T>& dy) {
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (!(y[i] > T(0))) dy[i] *= slope;
  }
}

namespace {

std::size_t bin_start(std::size_t i, std::size_t in, std::size_t out) { return (i * in) / out; }
std::size_t bin_end(std::size_t i, std::size_t in, std::size_t out) {
  return ((i + 1) * in + out - 1) / out;
}

}  // namespace

template <class T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, std::size_t oh, std::size_t ow) {
  if (x.rank() != 3) throw ShapeError("adaptive_avg_pool expects [C,H,W]");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> y({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      const std::size_t y0 = bin_start(i, h, oh), y1 = bin_end(i, h, oh);
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t x0 = bin_start(j, w, ow), x1 = bin_end(j, w, ow);
        T sum = T(0);
        for (std::size_t yy = y0; yy < y1; ++yy) {
          for (std::size_t xx = x0; xx < x1; ++xx) sum += x.at(ch, yy, xx);
        }
        y.at(ch, i, j) = sum / static_cast<T>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> adaptive_avg_pool_backward(const Tensor<T>& dy, std::size_t h, std::size_t w) {
  const std::size_t c = dy.dim(0), oh = dy.dim(1), ow = dy.dim(2);
  Tensor<T> dx({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      const std::size_t y0 = bin_start(i, h, oh), y1 = bin_end(i, h, oh);
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t x0 = bin_start(j, w, ow), x1 = bin_end(j, w, ow);
        const T g = dy.at(ch, i, j) / static_cast<T>((y1 - y0) * (x1 - x0));
        for (std::size_t yy = y0; yy < y1; ++yy) {
          for (std::size_t xx = x0; xx < x1; ++xx) dx.at(ch, yy, xx) += g;
        }
      }
    }
  }
  return dx;
}

template <class T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> y({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) y.at(ch, i, j) = x.at(ch, i / 2, j / 2);
    }
  }
  return y;
}

template <class T>
Tensor<T> upsample_nearest2x_backward(const Tensor<T>& dy) {
  const std::size_t c = dy.dim(0), h = dy.dim(1) / 2, w = dy.dim(2) / 2;
  Tensor<T> dx({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) dx.at(ch, i / 2, j / 2) += dy.at(ch, i, j);
    }
  }
  return dx;
}

namespace {

// Source taps for output index o of a 2x bilinear upsample of length n.
struct Taps {
  std::size_t i0, i1;
  double w0, w1;
};

Taps bilinear_taps(std::size_t o, std::size_t n) {
  const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
  const double fl = std::floor(src);
  const double frac = src - fl;
  const long lo = static_cast<long>(fl);
  const long max_index = static_cast<long>(n) - 1;
  const auto clamp = [&](long v) { return static_cast<std::size_t>(std::clamp(v, 0L, max_index)); };
  return {clamp(lo), clamp(lo + 1), 1.0 - frac, frac};
}

}  // namespace

template <class T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> y({c, 2 * h, 2 * w});
  for (std::size_t i = 0; i < 2 * h; ++i) {
    const Taps ty = bilinear_taps(i, h);
    for (std::size_t j = 0; j < 2 * w; ++j) {
      const Taps tx = bilinear_taps(j, w);
      const T w00 = static_cast<T>(ty.w0 * tx.w0), w01 = static_cast<T>(ty.w0 * tx.w1);
      const T w10 = static_cast<T>(ty.w1 * tx.w0), w11 = static_cast<T>(ty.w1 * tx.w1);
      for (std::size_t ch = 0; ch < c; ++ch) {
        y.at(ch, i, j) = w00 * x.at(ch, ty.i0, tx.i0) + w01 * x.at(ch, ty.i0, tx.i1) +
                         w10 * x.at(ch, ty.i1, tx.i0) + w11 * x.at(ch, ty.i1, tx.i1);
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> upsample_bilinear2x_backward(const Tensor<T>& dy) {
  const std::size_t c = dy.dim(0), h = dy.dim(1) / 2, w = dy.dim(2) / 2;
  Tensor<T> dx({c, h, w});
  for (std::size_t i = 0; i < 2 * h; ++i) {
    const Taps ty = bilinear_taps(i, h);
    for (std::size_t j = 0; j < 2 * w; ++j) {
      const Taps tx = bilinear_taps(j, w);
      const T w00 = static_cast<T>(ty.w0 * tx.w0), w01 = static_cast<T>(ty.w0 * tx.w1);
      const T w10 = static_cast<T>(ty.w1 * tx.w0), w11 = static_cast<T>(ty.w1 * tx.w1);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T g = dy.at(ch, i, j);
        dx.at(ch, ty.i0, tx.i0) += w00 * g;
        dx.at(ch, ty.i0, tx.i1) += w01 * g;
        dx.at(ch, ty.i1, tx.i0) += w10 * g;
        dx.at(ch, ty.i1, tx.i1) += w11 * g;
      }
    }
  }
  return dx;
}

#define FACEREENACT_INSTANTIATE_NN(T)                                                       \
  template void fill_normal<T>(Tensor<T>&, Rng&, double);                                    \
  template void im2col<T>(const T*, std::size_t, std::size_t, std::size_t, const ConvGeometry&, \
                          T*);                                                               \
  template void col2im<T>(const T*, std::size_t, std::size_t, std::size_t, const ConvGeometry&, \
                          T*);                                                               \
  template class Conv2d<T>;                                                                  \
  template void leaky_relu_forward<T>(Tensor<T>&, T);                                        \
  template void leaky_relu_backward<T>(const Tensor<T>&, T, Tensor<T>&);                     \
  template Tensor<T> adaptive_avg_pool<T>(const Tensor<T>&, std::size_t, std::size_t);       \
  template Tensor<T> adaptive_avg_pool_backward<T>(const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> upsample_nearest2x<T>(const Tensor<T>&);                                \
  template Tensor<T> upsample_nearest2x_backward<T>(const Tensor<T>&);                       \
  template Tensor<T> upsample_bilinear2x<T>(const Tensor<T>&);                               \
  template Tensor<T> upsample_bilinear2x_backward<T>(const Tensor<T>&);

FACEREENACT_INSTANTIATE_NN(float)
FACEREENACT_INSTANTIATE_NN(double)

#undef FACEREENACT_INSTANTIATE_NN

}  // namespace facereenact::nn
