#include "facereenact/generator.hpp"

#include <cmath>
#include <numbers>

#include "facereenact/kernels.hpp"

namespace facereenact {

namespace {

constexpr double kActivationSlope = 0.2;
constexpr double kDemodEps = 1e-8;

Shape kernel_shape(const LayerSpec& l) {
  return {l.out_channels, l.in_channels, l.kernel_size, l.kernel_size};
}

}  // namespace

template <class T>
void validate_offsets(const GeneratorArch& arch, const WeightOffsets<T>& offsets) {
  for (const auto& [index, delta] : offsets.entries) {
    if (index >= arch.layers.size()) {
      throw ShapeError("offset for unknown layer " + std::to_string(index));
    }
    const LayerSpec& l = arch.layers[index];
    if (l.kind != LayerKind::Conv) {
      throw ShapeError("offset targets uncontrolled layer " + l.name);
    }
    require_shape(delta.shape(), kernel_shape(l), "offset for " + l.name);
    const std::size_t kk = l.kernel_size * l.kernel_size;
    for (std::size_t pair = 0; pair < l.out_channels * l.in_channels; ++pair) {
      const T* taps = delta.data() + pair * kk;
      for (std::size_t t = 1; t < kk; ++t) {
        if (taps[t] != taps[0]) {
          throw ShapeError("offset for " + l.name + " is not spatially repeated");
        }
      }
    }
  }
}

template <class T>
KernelSet<T> apply_offsets(const GeneratorArch& arch, const KernelSet<T>& base,
                           const WeightOffsets<T>& offsets) {
  if (base.size() != arch.layers.size()) {
    throw ShapeError("kernel set has " + std::to_string(base.size()) + " layers, arch has " +
                     std::to_string(arch.layers.size()));
  }
  for (const auto& [index, delta] : offsets.entries) {
    if (index >= arch.layers.size() || arch.layers[index].kind != LayerKind::Conv) {
      throw ShapeError("offset targets uncontrolled layer " + std::to_string(index));
    }
    require_shape(delta.shape(), base[index].shape(), "offset for " + arch.layers[index].name);
  }
  KernelSet<T> out = base;
  for (const auto& [index, delta] : offsets.entries) {
    kernels::scale_by_offset<T>(delta.size(), base[index].data(), delta.data(), out[index].data());
  }
  return out;
}

template <class T>
Generator<T>::Generator(GeneratorArch arch, GeneratorConfig config)
    : arch_(std::move(arch)), config_(config) {
  arch_.validate();
  Rng rng(config_.seed);
  const_input_ = Tensor<T>({arch_.const_channels(), arch_.base_resolution, arch_.base_resolution});
  nn::fill_normal(const_input_, rng, 1.0);
  Rng noise_rng(config_.noise_seed);
  for (const LayerSpec& l : arch_.layers) {
    Tensor<T> k(kernel_shape(l));
    nn::fill_normal(k, rng, 1.0);
    kernels_.push_back(std::move(k));
    bias_.emplace_back(Shape{l.out_channels});
    Tensor<T> a({l.in_channels, kLatentDim});
    nn::fill_normal(a, rng, 1.0);
    affine_weight_.push_back(std::move(a));
    affine_bias_.emplace_back(Shape{l.in_channels}, T(1));
    if (l.kind == LayerKind::Conv) {
      Tensor<T> n({l.resolution, l.resolution});
      nn::fill_normal(n, noise_rng, 1.0);
      noise_.push_back(std::move(n));
    } else {
      noise_.emplace_back();
    }
  }
  for (std::size_t i = 0; i < config_.mapping_layers; ++i) {
    Tensor<T> w({kLatentDim, kLatentDim});
    nn::fill_normal(w, rng, 1.0);
    mapping_weight_.push_back(std::move(w));
    mapping_bias_.emplace_back(Shape{kLatentDim});
  }
}

template <class T>
Tensor<T> Generator<T>::style_vector(std::size_t layer, const LatentCode<T>& w) const {
  const LayerSpec& l = arch_.layers[layer];
  Tensor<T> s({l.in_channels});
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(kLatentDim)));
  kernels::gemm<T>(false, false, l.in_channels, 1, kLatentDim, scale, affine_weight_[layer].data(),
                   kLatentDim, w.styles.data() + l.style_index * kLatentDim, 1, T(0), s.data(), 1);
  for (std::size_t i = 0; i < l.in_channels; ++i) s[i] += affine_bias_[layer][i];
  return s;
}

template <class T>
Tensor<T> Generator<T>::synthesize(const KernelSet<T>& kernels, const LatentCode<T>& w,
                                   SynthesisTape<T>* tape) const {
  if (kernels.size() != arch_.layers.size()) throw ShapeError("kernel set does not match arch");
  require_shape(w.styles.shape(), {arch_.num_styles(), kLatentDim}, "latent code");
  if (tape) {
    tape->layers.clear();
    tape->layers.resize(arch_.layers.size());
  }

  const T slope = static_cast<T>(kActivationSlope);
  const T gain = static_cast<T>(std::numbers::sqrt2);
  Tensor<T> x = const_input_;
  Tensor<T> rgb;
  for (const LayerSpec& l : arch_.layers) {
    require_shape(kernels[l.index].shape(), kernel_shape(l), "kernel for " + l.name);
    const Tensor<T> style = style_vector(l.index, w);
    const std::size_t kk = l.kernel_size * l.kernel_size;
    const std::size_t patch = l.in_channels * kk;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(patch)));
    Tensor<T> weight({l.out_channels, patch});
    const T* raw = kernels[l.index].data();
    for (std::size_t o = 0; o < l.out_channels; ++o) {
      for (std::size_t i = 0; i < l.in_channels; ++i) {
        const T m = style[i] * scale;
        for (std::size_t t = 0; t < kk; ++t) {
          weight[o * patch + i * kk + t] = raw[o * patch + i * kk + t] * m;
        }
      }
    }
    const std::size_t res = l.resolution;
    const std::size_t hw = res * res;

    if (l.kind == LayerKind::Conv) {
      Tensor<T> demod({l.out_channels});
      for (std::size_t o = 0; o < l.out_channels; ++o) {
        const T* row = weight.data() + o * patch;
        const T d = T(1) / std::sqrt(kernels::dot<T>(patch, row, row) + static_cast<T>(kDemodEps));
        demod[o] = d;
        for (std::size_t j = 0; j < patch; ++j) weight[o * patch + j] *= d;
      }
      if (l.upsample) x = nn::upsample_nearest2x(x);
      const nn::ConvGeometry g{l.in_channels, l.out_channels, 3, 1, 1};
      Tensor<T> col({patch, hw});
      nn::im2col(x.data(), 1, res, res, g, col.data());
      Tensor<T> y({l.out_channels, res, res});
      kernels::gemm<T>(false, false, l.out_channels, hw, patch, T(1), weight.data(), patch,
                       col.data(), hw, T(0), y.data(), hw);
      const T noise_gain = config_.noise ? static_cast<T>(config_.noise_strength) : T(0);
      for (std::size_t o = 0; o < l.out_channels; ++o) {
        T* row = y.data() + o * hw;
        const T b = bias_[l.index][o];
        for (std::size_t p = 0; p < hw; ++p) {
          T v = row[p] + b;
          if (config_.noise) v += noise_gain * noise_[l.index][p];
          row[p] = (v > T(0) ? v : v * slope) * gain;
        }
      }
      x = std::move(y);
      if (tape) {
        auto& rec = tape->layers[l.index];
        rec.col = std::move(col);
        rec.weight = std::move(weight);
        rec.demod = std::move(demod);
        rec.style = style;
        rec.activation = x;
      }
    } else {
      Tensor<T> out({3, res, res});
      kernels::gemm<T>(false, false, 3, hw, l.in_channels, T(1), weight.data(), patch, x.data(), hw,
                       T(0), out.data(), hw);
      for (std::size_t o = 0; o < 3; ++o) {
        for (std::size_t p = 0; p < hw; ++p) out[o * hw + p] += bias_[l.index][o];
      }
      if (tape) {
        auto& rec = tape->layers[l.index];
        rec.weight = std::move(weight);
        rec.style = style;
        rec.activation = out;
      }
      if (rgb.empty()) {
        rgb = std::move(out);
      } else {
        Tensor<T> up = nn::upsample_bilinear2x(rgb);
        kernels::axpy<T>(up.size(), T(1), out.data(), up.data());
        rgb = std::move(up);
      }
    }
  }
  for (auto& v : rgb.values()) v = std::tanh(v);
  if (tape) tape->image = rgb;
  return rgb;
}

template <class T>
std::map<std::size_t, Tensor<T>> Generator<T>::backward_kernels(
    const SynthesisTape<T>& tape, const Tensor<T>& d_image,
    const std::vector<std::size_t>& layers) const {
  require_shape(d_image.shape(), tape.image.shape(), "d_image");
  std::vector<bool> wanted(arch_.layers.size(), false);
  std::size_t first_wanted = arch_.layers.size();
  for (std::size_t i : layers) {
    if (i >= arch_.layers.size() || arch_.layers[i].kind != LayerKind::Conv) {
      throw ShapeError("kernel gradient requested for uncontrolled layer " + std::to_string(i));
    }
    wanted[i] = true;
    first_wanted = std::min(first_wanted, i);
  }

  const T slope = static_cast<T>(kActivationSlope);
  const T gain = static_cast<T>(std::numbers::sqrt2);
  Tensor<T> d_rgb = d_image;
  for (std::size_t i = 0; i < d_rgb.size(); ++i) {
    const T y = tape.image[i];
    d_rgb[i] *= (T(1) - y * y);
  }
  Tensor<T> d_x;
  std::map<std::size_t, Tensor<T>> grads;

  for (std::size_t idx = arch_.layers.size(); idx-- > first_wanted;) {
    const LayerSpec& l = arch_.layers[idx];
    const auto& rec = tape.layers[idx];
    const std::size_t res = l.resolution;
    const std::size_t hw = res * res;
    const std::size_t kk = l.kernel_size * l.kernel_size;
    const std::size_t patch = l.in_channels * kk;

    if (l.kind == LayerKind::ToRGB) {
      if (d_x.empty()) d_x = Tensor<T>({l.in_channels, res, res});
      kernels::gemm<T>(true, false, l.in_channels, hw, 3, T(1), rec.weight.data(), patch,
                       d_rgb.data(), hw, T(1), d_x.data(), hw);
      if (idx > 1) d_rgb = nn::upsample_bilinear2x_backward(d_rgb);
      continue;
    }

    // Conv: back through activation, then the convolution itself.
    Tensor<T> d_pre = d_x;
    for (std::size_t i = 0; i < d_pre.size(); ++i) {
      d_pre[i] *= rec.activation[i] > T(0) ? gain : gain * slope;
    }
    if (wanted[idx]) {
      Tensor<T> d_weight({l.out_channels, patch});
      kernels::gemm<T>(false, true, l.out_channels, patch, hw, T(1), d_pre.data(), hw,
                       rec.col.data(), hw, T(0), d_weight.data(), patch);
      const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(patch)));
      Tensor<T> d_kernel(kernel_shape(l));
      for (std::size_t o = 0; o < l.out_channels; ++o) {
        const T* dw = d_weight.data() + o * patch;
        const T* wf = rec.weight.data() + o * patch;
        const T proj = kernels::dot<T>(patch, dw, wf);
        const T d = rec.demod[o];
        for (std::size_t i = 0; i < l.in_channels; ++i) {
          const T m = rec.style[i] * scale * d;
          for (std::size_t t = 0; t < kk; ++t) {
            const std::size_t j = i * kk + t;
            d_kernel[o * patch + j] = (dw[j] - wf[j] * proj) * m;
          }
        }
      }
      grads.emplace(idx, std::move(d_kernel));
    }
    if (idx == first_wanted) break;
    Tensor<T> d_col({patch, hw});
    kernels::gemm<T>(true, false, patch, hw, l.out_channels, T(1), rec.weight.data(), patch,
                     d_pre.data(), hw, T(0), d_col.data(), hw);
    Tensor<T> d_in({l.in_channels, res, res});
    const nn::ConvGeometry g{l.in_channels, l.out_channels, 3, 1, 1};
    nn::col2im(d_col.data(), 1, res, res, g, d_in.data());
    d_x = l.upsample ? nn::upsample_nearest2x_backward(d_in) : std::move(d_in);
  }
  return grads;
}

template <class T>
LatentCode<T> Generator<T>::map_latent(const Tensor<T>& z) const {
  require_shape(z.shape(), {kLatentDim}, "mapping input");
  Tensor<T> h = z;
  T norm = T(0);
  for (T v : h.values()) norm += v * v;
  norm = std::sqrt(norm / static_cast<T>(kLatentDim) + static_cast<T>(1e-8));
  for (auto& v : h.values()) v /= norm;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(kLatentDim)));
  const T gain = static_cast<T>(std::numbers::sqrt2);
  for (std::size_t i = 0; i < mapping_weight_.size(); ++i) {
    Tensor<T> next({kLatentDim});
    kernels::gemm<T>(false, false, kLatentDim, 1, kLatentDim, scale, mapping_weight_[i].data(),
                     kLatentDim, h.data(), 1, T(0), next.data(), 1);
    for (std::size_t j = 0; j < kLatentDim; ++j) {
      const T v = next[j] + mapping_bias_[i][j];
      next[j] = (v > T(0) ? v : v * static_cast<T>(kActivationSlope)) * gain;
    }
    h = std::move(next);
  }
  LatentCode<T> code{Tensor<T>({arch_.num_styles(), kLatentDim})};
  for (std::size_t r = 0; r < arch_.num_styles(); ++r) {
    std::copy(h.values().begin(), h.values().end(), code.styles.data() + r * kLatentDim);
  }
  return code;
}

template <class T>
LatentCode<T> Generator<T>::sample_latent(Rng& rng) const {
  Tensor<T> z({kLatentDim});
  nn::fill_normal(z, rng, 1.0);
  return map_latent(z);
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>*>> Generator<T>::named_tensors() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  out.emplace_back("const_input", &const_input_);
  for (const LayerSpec& l : arch_.layers) {
    out.emplace_back(l.name + ".kernel", &kernels_[l.index]);
    out.emplace_back(l.name + ".bias", &bias_[l.index]);
    out.emplace_back(l.name + ".affine.weight", &affine_weight_[l.index]);
    out.emplace_back(l.name + ".affine.bias", &affine_bias_[l.index]);
    if (!noise_[l.index].empty()) out.emplace_back(l.name + ".noise", &noise_[l.index]);
  }
  for (std::size_t i = 0; i < mapping_weight_.size(); ++i) {
    out.emplace_back("mapping" + std::to_string(i) + ".weight", &mapping_weight_[i]);
    out.emplace_back("mapping" + std::to_string(i) + ".bias", &mapping_bias_[i]);
  }
  return out;
}

template <class T>
std::vector<std::pair<std::string, const Tensor<T>*>> Generator<T>::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (auto& [name, t] : const_cast<Generator*>(this)->named_tensors()) out.emplace_back(name, t);
  return out;
}

template void validate_offsets<float>(const GeneratorArch&, const WeightOffsets<float>&);
template void validate_offsets<double>(const GeneratorArch&, const WeightOffsets<double>&);
template KernelSet<float> apply_offsets<float>(const GeneratorArch&, const KernelSet<float>&,
                                               const WeightOffsets<float>&);
template KernelSet<double> apply_offsets<double>(const GeneratorArch&, const KernelSet<double>&,
                                                 const WeightOffsets<double>&);
template class Generator<float>;
template class Generator<double>;

}  // namespace facereenact
