#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace facereenact {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class LayerKind { Conv, ToRGB };

struct LayerSpec {
  std::size_t index = 0;
  std::string name;
  LayerKind kind = LayerKind::Conv;
  std::size_t resolution = 0;
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel_size = 0;
  /// Row of the W+ code consumed by this layer. A ToRGB layer shares its row
  /// with the first convolution of the next block, as in StyleGAN2.
  std::size_t style_index = 0;
  /// First convolution of a block upsamples its input 2x.
  bool upsample = false;

  std::size_t kernel_numel() const {
    return out_channels * in_channels * kernel_size * kernel_size;
  }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct GeneratorArch {
  std::vector<LayerSpec> layers;
  std::size_t base_resolution = 4;
  std::size_t output_resolution = 0;

  std::size_t num_styles() const;
  std::size_t const_channels() const { return layers.front().in_channels; }
  /// Indices of hypernetwork-controlled layers: every Conv, never ToRGB.
  std::vector<std::size_t> controlled_layers() const;
  std::size_t count(LayerKind kind) const;
  std::size_t max_channels() const;
  const LayerSpec& layer(std::size_t index) const { return layers.at(index); }

  /// Throws ConfigError unless the table satisfies the LayerSpec/GeneratorArch invariants.
  void validate() const;

  friend bool operator==(const GeneratorArch&, const GeneratorArch&) = default;
};

/// The 256x256 StyleGAN2 synthesis table: 13 Conv + 7 ToRGB layers.
GeneratorArch canonical_arch();

/// Same block structure at a smaller output resolution; channels follow the
/// canonical per-resolution schedule clamped to channel_cap.
GeneratorArch scaled_arch(std::size_t output_resolution, std::size_t channel_cap);

/// Channel count the canonical schedule assigns to a resolution (512 up to 32x32, then halving).
std::size_t canonical_channels(std::size_t resolution);

}  // namespace facereenact
