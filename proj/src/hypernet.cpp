#include "facereenact/hypernet.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "facereenact/kernels.hpp"

namespace facereenact {

const char* block_type_name(BlockType t) {
  return t == BlockType::Shared ? "shared" : "layer_specific";
}

BlockAssignment BlockAssignment::default_for(const GeneratorArch& arch) {
  BlockAssignment a;
  const std::size_t widest = arch.max_channels();
  for (std::size_t l : arch.controlled_layers()) {
    const LayerSpec& s = arch.layers[l];
    const bool shared = s.out_channels == widest && s.in_channels == widest;
    a.entries.emplace_back(l, shared ? BlockType::Shared : BlockType::LayerSpecific);
  }
  return a;
}

void BlockAssignment::validate(const GeneratorArch& arch) const {
  std::set<std::size_t> seen;
  const LayerSpec* shared_shape = nullptr;
  for (const auto& [layer, type] : entries) {
    if (layer >= arch.layers.size() || arch.layers[layer].kind != LayerKind::Conv) {
      throw ConfigError("block assignment targets layer " + std::to_string(layer) +
                        ", which is not a controlled Conv layer");
    }
    if (!seen.insert(layer).second) {
      throw ConfigError("layer " + std::to_string(layer) + " is assigned twice");
    }
    if (type == BlockType::Shared) {
      const LayerSpec& s = arch.layers[layer];
      if (shared_shape && (shared_shape->out_channels != s.out_channels ||
                           shared_shape->in_channels != s.in_channels)) {
        throw ConfigError("shared blocks need identical kernel dims, but " + shared_shape->name +
                          " and " + s.name + " differ");
      }
      shared_shape = &s;
    }
  }
}

std::vector<std::size_t> BlockAssignment::layers(BlockType t) const {
  std::vector<std::size_t> out;
  for (const auto& [layer, type] : entries) {
    if (type == t) out.push_back(layer);
  }
  return out;
}

std::vector<BlockLayerShape> block_layout(BlockType type, const LayerSpec& target) {
  const std::size_t width = type == BlockType::Shared ? 128 : 256;
  std::vector<BlockLayerShape> out = {
      {"conv1", width, kFusedChannels, 3, 1, 1, 7},
      {"conv2", width, width, 3, 1, 0, 5},
      {"conv3", width, width, 3, 1, 0, 3},
      {"conv4", kFusedChannels, width, 3, 1, 0, 1},
  };
  if (type == BlockType::Shared) {
    out.push_back({"fc", 512, 512});
    out.push_back({"fc1", target.in_channels * 512, 512});
    out.push_back({"fc2", target.out_channels, 512});
  } else {
    out.push_back({"fc", target.out_channels * target.in_channels, 512});
  }
  return out;
}

namespace {

std::uint64_t layer_params(const BlockLayerShape& l) {
  return static_cast<std::uint64_t>(l.out) * l.in * l.kernel * l.kernel + l.out;
}

}  // namespace

ParamCount param_count(const BlockAssignment& assignment, const GeneratorArch& arch, bool sharing) {
  assignment.validate(arch);
  ParamCount c;
  bool shared_heads_counted = false;
  for (const auto& [layer, type] : assignment.entries) {
    const auto layout = block_layout(type, arch.layers[layer]);
    for (std::size_t i = 0; i < 4; ++i) {
      (type == BlockType::Shared ? c.shared_conv_stacks : c.specific_conv_stacks) +=
          layer_params(layout[i]);
    }
    if (type == BlockType::LayerSpecific) {
      c.specific_fcs += layer_params(layout[4]);
      continue;
    }
    c.shared_block_fcs += layer_params(layout[4]);
    if (!sharing || !shared_heads_counted) {
      c.shared_fc1 += layer_params(layout[5]);
      c.shared_fc2 += layer_params(layout[6]);
      shared_heads_counted = true;
    }
  }
  return c;
}

template <class T>
struct Hypernet<T>::Block {
  BlockType type;
  LayerSpec target;
  std::vector<nn::Conv2d<T>> stack;
  nn::Conv2d<T> fc;
  std::size_t head = 0;  // shared: index into heads_
};

template <class T>
struct Hypernet<T>::HeadGroup {
  std::size_t in = 0, out = 0;
  nn::Param<T> fc1_w, fc1_b, fc2_w, fc2_b;
};

template <class T>
Hypernet<T>::Hypernet(const GeneratorArch& arch, BlockAssignment assignment, HypernetConfig config)
    : arch_(arch), assignment_(std::move(assignment)), config_(config) {
  assignment_.validate(arch_);
  std::sort(assignment_.entries.begin(), assignment_.entries.end());
  Rng rng(config_.seed);
  const double fan512 = 1.0 / std::sqrt(512.0);
  for (const auto& [layer, type] : assignment_.entries) {
    auto block = std::make_unique<Block>();
    block->type = type;
    block->target = arch_.layers[layer];
    const auto layout = block_layout(type, block->target);
    const std::string prefix = "hypernet." + block->target.name + ".";
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& l = layout[i];
      block->stack.emplace_back(prefix + l.name, nn::ConvGeometry{l.in, l.out, l.kernel, l.stride, l.pad},
                                true);
      block->stack.back().init_fan_in(rng, std::sqrt(2.0));
    }
    block->fc = nn::Conv2d<T>(prefix + "fc", {512, layout[4].out, 1, 1, 0}, true);
    block->fc.init_fan_in(rng, 1.0);
    if (type == BlockType::LayerSpecific && config_.zero_heads) {
      block->fc.weight().value.fill(T(0));
    }
    if (type == BlockType::Shared) {
      if (!config_.sharing || heads_.empty()) {
        auto head = std::make_unique<HeadGroup>();
        const std::string hp = config_.sharing ? "hypernet.shared." : prefix;
        head->in = block->target.in_channels;
        head->out = block->target.out_channels;
        head->fc1_w = nn::Param<T>(hp + "fc1.weight", {head->in * 512, 512});
        head->fc1_b = nn::Param<T>(hp + "fc1.bias", {head->in * 512});
        head->fc2_w = nn::Param<T>(hp + "fc2.weight", {head->out, 512});
        head->fc2_b = nn::Param<T>(hp + "fc2.bias", {head->out});
        nn::fill_normal(head->fc1_w.value, rng, fan512);
        if (!config_.zero_heads) nn::fill_normal(head->fc2_w.value, rng, fan512);
        heads_.push_back(std::move(head));
      }
      block->head = heads_.size() - 1;
    }
    blocks_.push_back(std::move(block));
  }
}

template <class T>
Hypernet<T>::~Hypernet() = default;
template <class T>
Hypernet<T>::Hypernet(Hypernet&&) noexcept = default;
template <class T>
Hypernet<T>& Hypernet<T>::operator=(Hypernet&&) noexcept = default;

template <class T>
OffsetPredictions<T> Hypernet<T>::forward(const Tensor<T>& f_r, std::size_t batch,
                                          HypernetTape<T>* tape) const {
  require_shape(f_r.shape(), {kFusedChannels, batch, kFeatureGrid, kFeatureGrid}, "fused features");
  const T slope = static_cast<T>(config_.slope);
  if (tape) {
    tape->blocks.assign(blocks_.size(), {});
    tape->batch = batch;
  }
  OffsetPredictions<T> out;
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    const Block& block = *blocks_[bi];
    typename HypernetTape<T>::BlockTape local;
    auto& bt = tape ? tape->blocks[bi] : local;
    bt.convs.assign(block.stack.size(), {});
    bt.acts.clear();
    Tensor<T> x = f_r;
    std::size_t grid = kFeatureGrid;
    for (std::size_t s = 0; s < block.stack.size(); ++s) {
      Tensor<T> y = block.stack[s].forward(x, batch, grid, grid, &bt.convs[s]);
      grid = block.stack[s].geometry().out_size(grid);
      nn::leaky_relu_forward(y, slope);
      if (tape) bt.acts.push_back(y);
      x = std::move(y);
    }
    const std::size_t cout = block.target.out_channels, cin = block.target.in_channels;
    Tensor<T> pred({batch, cout, cin});
    if (block.type == BlockType::LayerSpecific) {
      const Tensor<T> h = block.fc.forward(x, batch, 1, 1, &bt.fc);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t i = 0; i < cin; ++i) pred[(b * cout + o) * cin + i] = h[(o * cin + i) * batch + b];
    } else {
      const HeadGroup& head = *heads_[block.head];
      bt.h = block.fc.forward(x, batch, 1, 1, &bt.fc).reshaped({512, batch});
      bt.fc1 = Tensor<T>({batch * cin, 512});
      kernels::gemm<T>(true, true, batch, cin * 512, 512, T(1), bt.h.data(), batch,
                       head.fc1_w.value.data(), 512, T(0), bt.fc1.data(), cin * 512);
      for (std::size_t b = 0; b < batch; ++b) {
        kernels::axpy<T>(cin * 512, T(1), head.fc1_b.value.data(), bt.fc1.data() + b * cin * 512);
      }
      Tensor<T> r({batch * cin, cout});
      kernels::gemm<T>(false, true, batch * cin, cout, 512, T(1), bt.fc1.data(), 512,
                       head.fc2_w.value.data(), 512, T(0), r.data(), cout);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < cin; ++i)
          for (std::size_t o = 0; o < cout; ++o) {
            pred[(b * cout + o) * cin + i] = r[(b * cin + i) * cout + o] + head.fc2_b.value[o];
          }
    }
    out.emplace(block.target.index, std::move(pred));
  }
  return out;
}

template <class T>
Tensor<T> Hypernet<T>::backward(const HypernetTape<T>& tape, const OffsetPredictions<T>& d_pred) {
  const std::size_t batch = tape.batch;
  if (tape.blocks.size() != blocks_.size()) throw ShapeError("hypernet tape does not match blocks");
  const T slope = static_cast<T>(config_.slope);
  Tensor<T> d_fr({kFusedChannels, batch, kFeatureGrid, kFeatureGrid});
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    Block& block = *blocks_[bi];
    const auto& bt = tape.blocks[bi];
    auto it = d_pred.find(block.target.index);
    if (it == d_pred.end()) continue;
    const std::size_t cout = block.target.out_channels, cin = block.target.in_channels;
    const Tensor<T>& dp = it->second;
    require_shape(dp.shape(), {batch, cout, cin}, "offset gradient for " + block.target.name);

    Tensor<T> d_x;
    if (block.type == BlockType::LayerSpecific) {
      Tensor<T> d_h({cout * cin, batch, 1, 1});
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t i = 0; i < cin; ++i) d_h[(o * cin + i) * batch + b] = dp[(b * cout + o) * cin + i];
      d_x = block.fc.backward(bt.fc, d_h, true);
    } else {
      HeadGroup& head = *heads_[block.head];
      Tensor<T> d_r({batch * cin, cout});
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < cin; ++i)
          for (std::size_t o = 0; o < cout; ++o) d_r[(b * cin + i) * cout + o] = dp[(b * cout + o) * cin + i];
      Tensor<T>& g_w2 = head.fc2_w.ensure_grad();
      Tensor<T>& g_b2 = head.fc2_b.ensure_grad();
      kernels::gemm<T>(true, false, cout, 512, batch * cin, T(1), d_r.data(), cout, bt.fc1.data(), 512,
                       T(1), g_w2.data(), 512);
      for (std::size_t row = 0; row < batch * cin; ++row)
        for (std::size_t o = 0; o < cout; ++o) g_b2[o] += d_r[row * cout + o];
      Tensor<T> d_fc1({batch * cin, 512});
      kernels::gemm<T>(false, false, batch * cin, 512, cout, T(1), d_r.data(), cout,
                       head.fc2_w.value.data(), 512, T(0), d_fc1.data(), 512);
      Tensor<T>& g_w1 = head.fc1_w.ensure_grad();
      Tensor<T>& g_b1 = head.fc1_b.ensure_grad();
      for (std::size_t b = 0; b < batch; ++b) {
        kernels::axpy<T>(cin * 512, T(1), d_fc1.data() + b * cin * 512, g_b1.data());
      }
      kernels::gemm<T>(true, true, cin * 512, 512, batch, T(1), d_fc1.data(), cin * 512, bt.h.data(),
                       batch, T(1), g_w1.data(), 512);
      Tensor<T> d_h({512, batch, 1, 1});
      kernels::gemm<T>(true, true, 512, batch, cin * 512, T(1), head.fc1_w.value.data(), 512,
                       d_fc1.data(), cin * 512, T(0), d_h.data(), batch);
      d_x = block.fc.backward(bt.fc, d_h, true);
    }
    for (std::size_t s = block.stack.size(); s-- > 0;) {
      nn::leaky_relu_backward(bt.acts[s], slope, d_x);
      d_x = block.stack[s].backward(bt.convs[s], d_x, true);
    }
    kernels::axpy<T>(d_fr.size(), T(1), d_x.data(), d_fr.data());
  }
  return d_fr;
}

template <class T>
std::vector<nn::Param<T>*> Hypernet<T>::params() {
  std::vector<nn::Param<T>*> out;
  for (auto& block : blocks_) {
    for (auto& conv : block->stack) {
      for (auto* p : conv.params()) out.push_back(p);
    }
    for (auto* p : block->fc.params()) out.push_back(p);
  }
  for (auto& head : heads_) {
    for (auto* p : {&head->fc1_w, &head->fc1_b, &head->fc2_w, &head->fc2_b}) out.push_back(p);
  }
  return out;
}

template <class T>
std::uint64_t Hypernet<T>::num_params() {
  std::uint64_t n = 0;
  for (auto* p : params()) n += p->size();
  return n;
}

template <class T>
std::vector<nn::Param<T>*> Hypernet<T>::shared_fc_params() {
  if (!config_.sharing || heads_.empty()) return {};
  auto& h = *heads_.front();
  return {&h.fc1_w, &h.fc1_b, &h.fc2_w, &h.fc2_b};
}

template <class T>
WeightOffsets<T> expand_offsets(const GeneratorArch& arch, const OffsetPredictions<T>& pred,
                                std::size_t b) {
  WeightOffsets<T> out;
  for (const auto& [layer, p] : pred) {
    const LayerSpec& l = arch.layer(layer);
    const std::size_t cout = l.out_channels, cin = l.in_channels, kk = l.kernel_size * l.kernel_size;
    if (p.rank() != 3 || b >= p.dim(0) || p.dim(1) != cout || p.dim(2) != cin) {
      throw ShapeError("prediction for " + l.name + " has shape " + shape_string(p.shape()));
    }
    Tensor<T> delta({cout, cin, l.kernel_size, l.kernel_size});
    const T* src = p.data() + b * cout * cin;
    for (std::size_t oi = 0; oi < cout * cin; ++oi) std::fill_n(delta.data() + oi * kk, kk, src[oi]);
    out.entries.emplace(layer, std::move(delta));
  }
  return out;
}

template <class T>
Tensor<T> reduce_offset_gradient(const Tensor<T>& d_kernel, const Tensor<T>& base_kernel) {
  require_shape(d_kernel.shape(), base_kernel.shape(), "kernel gradient");
  if (d_kernel.rank() != 4) throw ShapeError("kernel gradient must be [out, in, k, k]");
  const std::size_t cout = d_kernel.dim(0), cin = d_kernel.dim(1);
  const std::size_t kk = d_kernel.dim(2) * d_kernel.dim(3);
  Tensor<T> out({cout, cin});
  for (std::size_t oi = 0; oi < cout * cin; ++oi) {
    T s = T(0);
    for (std::size_t t = 0; t < kk; ++t) s += d_kernel[oi * kk + t] * base_kernel[oi * kk + t];
    out[oi] = s;
  }
  return out;
}

template class Hypernet<float>;
template class Hypernet<double>;
template WeightOffsets<float> expand_offsets<float>(const GeneratorArch&, const OffsetPredictions<float>&,
                                                    std::size_t);
template WeightOffsets<double> expand_offsets<double>(const GeneratorArch&,
                                                      const OffsetPredictions<double>&, std::size_t);
template Tensor<float> reduce_offset_gradient<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> reduce_offset_gradient<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace facereenact
