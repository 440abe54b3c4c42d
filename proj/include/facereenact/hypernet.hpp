#pragma once

// Hypernetwork: one reenactment block per controlled generator layer, each
// reading the fused map f_r [512, B, 7, 7] and predicting a C_out x C_in
// offset that is spatially repeated over the layer's k x k taps.
//
// Shared block:   conv stack 512-128-128-128-512 (7 -> 7 -> 5 -> 3 -> 1),
//                 per-block FC 512 -> 512, then two FCs common to all shared
//                 blocks: dense 512 -> C_in*512 (reshaped C_in x 512) and a
//                 row-wise 512 -> C_out.
// Layer-specific: conv stack 512-256-256-256-512, FC 512 -> C_out*C_in.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "facereenact/arch.hpp"
#include "facereenact/encoders.hpp"
#include "facereenact/generator.hpp"
#include "facereenact/nn.hpp"

namespace facereenact {

enum class BlockType { Shared, LayerSpecific };

const char* block_type_name(BlockType t);

struct BlockAssignment {
  std::vector<std::pair<std::size_t, BlockType>> entries;

  /// Square layers at the widest channel count share; all other Conv layers
  /// get a layer-specific block.
  static BlockAssignment default_for(const GeneratorArch& arch);
  /// Throws ConfigError for non-Conv targets, duplicates, or shared layers
  /// whose kernel dims differ from each other.
  void validate(const GeneratorArch& arch) const;
  std::vector<std::size_t> layers(BlockType t) const;
  friend bool operator==(const BlockAssignment&, const BlockAssignment&) = default;
};

/// Exact parameter totals of the hypernetwork, broken down for auditing.
struct ParamCount {
  std::uint64_t shared_conv_stacks = 0;
  std::uint64_t shared_block_fcs = 0;
  std::uint64_t shared_fc1 = 0;   // counted once per copy that exists
  std::uint64_t shared_fc2 = 0;
  std::uint64_t specific_conv_stacks = 0;
  std::uint64_t specific_fcs = 0;

  std::uint64_t total() const {
    return shared_conv_stacks + shared_block_fcs + shared_fc1 + shared_fc2 + specific_conv_stacks +
           specific_fcs;
  }
};

/// sharing=false gives every shared-type block its own copy of the two FCs.
ParamCount param_count(const BlockAssignment& assignment, const GeneratorArch& arch, bool sharing);

/// One conv or FC inside a block, as (name, out, in, kernel, stride, pad).
struct BlockLayerShape {
  std::string name;
  std::size_t out = 0, in = 0, kernel = 1, stride = 1, pad = 0;
  std::size_t out_grid = 1;
};
std::vector<BlockLayerShape> block_layout(BlockType type, const LayerSpec& target);

struct HypernetConfig {
  bool sharing = true;
  bool zero_heads = true;  // false gives random heads, used by gradient checks
  double slope = 0.01;
  std::uint64_t seed = 606;
};

/// Per-layer 1x1 predictions, each [B, C_out, C_in].
template <class T>
using OffsetPredictions = std::map<std::size_t, Tensor<T>>;

template <class T>
struct HypernetTape;

template <class T>
class Hypernet {
 public:
  Hypernet(const GeneratorArch& arch, BlockAssignment assignment, HypernetConfig config = {});
  ~Hypernet();
  Hypernet(Hypernet&&) noexcept;
  Hypernet& operator=(Hypernet&&) noexcept;

  const BlockAssignment& assignment() const { return assignment_; }
  const HypernetConfig& config() const { return config_; }

  /// f_r [512, B, 7, 7] -> predictions for every assigned layer.
  OffsetPredictions<T> forward(const Tensor<T>& f_r, std::size_t batch,
                               HypernetTape<T>* tape = nullptr) const;
  /// Accumulates parameter gradients from d predictions and returns d f_r.
  Tensor<T> backward(const HypernetTape<T>& tape, const OffsetPredictions<T>& d_pred);

  std::vector<nn::Param<T>*> params();
  std::uint64_t num_params();
  /// The two common FCs (empty when sharing is off).
  std::vector<nn::Param<T>*> shared_fc_params();

 private:
  struct Block;
  struct HeadGroup;

  GeneratorArch arch_;
  BlockAssignment assignment_;
  HypernetConfig config_;
  std::vector<std::unique_ptr<Block>> blocks_;
  std::vector<std::unique_ptr<HeadGroup>> heads_;
};

template <class T>
struct HypernetTape {
  struct BlockTape {
    std::vector<nn::ConvCache<T>> convs;
    std::vector<Tensor<T>> acts;  // post-activation output of each stack conv
    nn::ConvCache<T> fc;
    Tensor<T> h;      // per-block FC output [512, B] (shared) or head output (specific)
    Tensor<T> fc1;    // shared: [B * C_in, 512]
  };
  std::vector<BlockTape> blocks;
  std::size_t batch = 0;
};

/// Offsets for sample b, each prediction repeated over the layer's k x k taps.
template <class T>
WeightOffsets<T> expand_offsets(const GeneratorArch& arch, const OffsetPredictions<T>& pred,
                                std::size_t b);

/// d prediction for sample b from the raw-kernel gradient: the offset enters
/// as theta * (1 + delta), and each prediction feeds k x k taps.
template <class T>
Tensor<T> reduce_offset_gradient(const Tensor<T>& d_kernel, const Tensor<T>& base_kernel);

}  // namespace facereenact
