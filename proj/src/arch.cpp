#include "facereenact/arch.hpp"

#include <algorithm>
#include <set>

namespace facereenact {

std::size_t canonical_channels(std::size_t resolution) {
  if (resolution <= 32) return 512;
  return 512 * 32 / resolution;
}

std::size_t GeneratorArch::num_styles() const {
  std::set<std::size_t> rows;
  for (const auto& l : layers) rows.insert(l.style_index);
  return rows.size();
}

std::vector<std::size_t> GeneratorArch::controlled_layers() const {
  std::vector<std::size_t> out;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::Conv) out.push_back(l.index);
  }
  return out;
}

std::size_t GeneratorArch::count(LayerKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(layers.begin(), layers.end(), [&](const LayerSpec& l) { return l.kind == kind; }));
}

std::size_t GeneratorArch::max_channels() const {
  std::size_t best = 0;
  for (const auto& l : layers) best = std::max({best, l.in_channels, l.out_channels});
  return best;
}

void GeneratorArch::validate() const {
  if (layers.empty()) throw ConfigError("generator arch has no layers");
  std::size_t prev_res = base_resolution;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.index != i) throw ConfigError("layer " + l.name + " has index out of order");
    if (l.kind == LayerKind::ToRGB && (l.kernel_size != 1 || l.out_channels != 3)) {
      throw ConfigError("ToRGB layer " + l.name + " must be 3 x C x 1 x 1");
    }
    if (l.kind == LayerKind::Conv && l.kernel_size != 3) {
      throw ConfigError("Conv layer " + l.name + " must use 3x3 kernels");
    }
    if (l.resolution != prev_res && l.resolution != 2 * prev_res) {
      throw ConfigError("layer " + l.name + " breaks the resolution-doubling rule");
    }
    if (l.upsample != (l.resolution == 2 * prev_res)) {
      throw ConfigError("layer " + l.name + " upsample flag disagrees with its resolution");
    }
    prev_res = l.resolution;
  }
  if (layers.back().resolution != output_resolution) {
    throw ConfigError("last layer resolution differs from output_resolution");
  }
}

namespace {

GeneratorArch build_arch(std::size_t output_resolution, std::size_t channel_cap) {
  GeneratorArch arch;
  arch.base_resolution = 4;
  arch.output_resolution = output_resolution;
  auto channels = [&](std::size_t res) { return std::min(canonical_channels(res), channel_cap); };
  std::size_t conv_no = 1, rgb_no = 1;
  auto add = [&](LayerKind kind, std::size_t res, std::size_t out, std::size_t in,
                 std::size_t style, bool upsample) {
    LayerSpec l;
    l.index = arch.layers.size();
    l.kind = kind;
    l.name = kind == LayerKind::Conv ? "Conv" + std::to_string(conv_no++)
                                     : "ToRGB" + std::to_string(rgb_no++);
    l.resolution = res;
    l.out_channels = out;
    l.in_channels = in;
    l.kernel_size = kind == LayerKind::Conv ? 3 : 1;
    l.style_index = style;
    l.upsample = upsample;
    arch.layers.push_back(l);
  };

  const std::size_t c4 = channels(4);
  add(LayerKind::Conv, 4, c4, c4, 0, false);
  add(LayerKind::ToRGB, 4, 3, c4, 1, false);
  std::size_t style = 1;
  std::size_t prev = c4;
  for (std::size_t res = 8; res <= output_resolution; res *= 2) {
    const std::size_t c = channels(res);
    add(LayerKind::Conv, res, c, prev, style, true);
    add(LayerKind::Conv, res, c, c, style + 1, false);
    add(LayerKind::ToRGB, res, 3, c, style + 2, false);
    style += 2;
    prev = c;
  }
  arch.validate();
  return arch;
}

}  // namespace

GeneratorArch canonical_arch() { return build_arch(256, 512); }

GeneratorArch scaled_arch(std::size_t output_resolution, std::size_t channel_cap) {
  const bool power_of_two = output_resolution != 0 && (output_resolution & (output_resolution - 1)) == 0;
  if (!power_of_two || output_resolution < 8 || output_resolution > 256) {
    throw ConfigError("unsupported output resolution " + std::to_string(output_resolution) +
                      " (need a power of two in [8, 256])");
  }
  if (channel_cap == 0) throw ConfigError("channel_cap must be positive");
  return build_arch(output_resolution, channel_cap);
}

}  // namespace facereenact
