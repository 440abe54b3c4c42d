#pragma once

// StyleGAN2-style synthesis network driven by an explicit layer table.
//
// Conv layers are modulated/demodulated 3x3 convolutions; ToRGB layers are
// modulated 1x1 projections summed through a bilinear skip path, followed by
// tanh. The raw kernels are an input to synthesize(), so a hypernetwork can
// rewrite them per forward pass with apply_offsets().

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "facereenact/arch.hpp"
#include "facereenact/nn.hpp"
#include "facereenact/tensor.hpp"

namespace facereenact {

inline constexpr std::size_t kLatentDim = 512;

/// Per-layer raw kernels, indexed by layer index; each is [out, in, k, k].
template <class T>
using KernelSet = std::vector<Tensor<T>>;

/// W+ code: one style row per style slot of the generator.
template <class T>
struct LatentCode {
  Tensor<T> styles;  // [num_styles, latent_dim]

  std::size_t rows() const { return styles.dim(0); }
};

/// Multiplicative kernel offsets for a subset of controlled layers.
template <class T>
struct WeightOffsets {
  std::map<std::size_t, Tensor<T>> entries;
};

struct GeneratorConfig {
  std::uint64_t seed = 1;
  std::size_t mapping_layers = 8;
  bool noise = false;
  double noise_strength = 0.1;
  std::uint64_t noise_seed = 7;
};

/// Validates keys, shapes and the spatial-repeat property of offsets against arch.
template <class T>
void validate_offsets(const GeneratorArch& arch, const WeightOffsets<T>& offsets);

/// theta_hat = theta * (1 + delta) for every layer with an entry; other layers copied.
template <class T>
KernelSet<T> apply_offsets(const GeneratorArch& arch, const KernelSet<T>& base,
                           const WeightOffsets<T>& offsets);

/// Everything synthesize() needs to run the backward pass for one image.
template <class T>
struct SynthesisTape {
  struct Layer {
    Tensor<T> col;         // conv: im2col of the (upsampled) input
    Tensor<T> weight;      // effective modulated (and demodulated) weight, [out, in*k*k]
    Tensor<T> demod;       // conv: per-output-channel demodulation factors
    Tensor<T> style;       // per-input-channel style
    Tensor<T> activation;  // conv: output after the activation; ToRGB: its contribution
  };
  std::vector<Layer> layers;
  Tensor<T> image;
};

template <class T>
class Generator {
 public:
  Generator(GeneratorArch arch, GeneratorConfig config);

  const GeneratorArch& arch() const { return arch_; }
  const GeneratorConfig& config() const { return config_; }
  const KernelSet<T>& base_kernels() const { return kernels_; }

  /// Image [3, R, R] in [-1, 1]. kernels must conform to arch (use base_kernels()
  /// or apply_offsets()). Pass a tape to record state for backward().
  Tensor<T> synthesize(const KernelSet<T>& kernels, const LatentCode<T>& w,
                       SynthesisTape<T>* tape = nullptr) const;

  /// Gradient of a scalar loss with respect to the raw kernels of the listed
  /// layers, given dL/dimage. Frozen generator parameters receive nothing.
  std::map<std::size_t, Tensor<T>> backward_kernels(const SynthesisTape<T>& tape,
                                                    const Tensor<T>& d_image,
                                                    const std::vector<std::size_t>& layers) const;

  /// Mapping network z -> w, broadcast to every style row.
  LatentCode<T> map_latent(const Tensor<T>& z) const;
  LatentCode<T> sample_latent(Rng& rng) const;

  /// All frozen tensors, for checkpointing and freeze hashing.
  std::vector<std::pair<std::string, Tensor<T>*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor<T>*>> named_tensors() const;

 private:
  Tensor<T> style_vector(std::size_t layer, const LatentCode<T>& w) const;

  GeneratorArch arch_;
  GeneratorConfig config_;
  Tensor<T> const_input_;
  KernelSet<T> kernels_;
  std::vector<Tensor<T>> bias_;
  std::vector<Tensor<T>> affine_weight_;  // [in, latent]
  std::vector<Tensor<T>> affine_bias_;    // [in]
  std::vector<Tensor<T>> noise_;          // conv: [res, res]; ToRGB: empty
  std::vector<Tensor<T>> mapping_weight_;
  std::vector<Tensor<T>> mapping_bias_;
};

}  // namespace facereenact
