#include "facereenact/model.hpp"

namespace facereenact {

GeneratorArch ArchConfig::build() const {
  if (name == "canonical") return canonical_arch();
  if (name == "scaled") return scaled_arch(resolution, channel_cap);
  throw ConfigError("unknown arch '" + name + "' (expected scaled or canonical)");
}

namespace {

std::uint64_t fnv_mix(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

EncoderSuiteConfig encoders_for(const ModelConfig& c, const GeneratorArch& arch) {
  EncoderSuiteConfig e = c.encoders;
  e.resolution = arch.output_resolution;
  return e;
}

}  // namespace

template <class T>
Reenactor<T>::Reenactor(const ModelConfig& config)
    : config_(config),
      arch_(config.arch.build()),
      generator_(arch_, config.generator),
      encoders_(encoders_for(config, arch_), arch_.num_styles()),
      fusion_(config.fusion),
      hypernet_(arch_, config.assignment.value_or(BlockAssignment::default_for(arch_)), config.hypernet) {
  config_.encoders.resolution = arch_.output_resolution;
  for (const auto& [layer, type] : hypernet_.assignment().entries) controlled_.push_back(layer);
}

template <class T>
std::vector<Tensor<T>> Reenactor<T>::forward(const std::vector<const Tensor<T>*>& sources,
                                             const std::vector<const Tensor<T>*>& targets,
                                             ReenactTape<T>* tape) const {
  if (sources.empty() || sources.size() != targets.size()) {
    throw ShapeError("reenactor needs one target per source");
  }
  const std::size_t batch = sources.size();
  std::vector<Tensor<T>> apps, poses;
  std::vector<LatentCode<T>> latents;
  for (std::size_t b = 0; b < batch; ++b) {
    apps.push_back(encoders_.encode_appearance(*sources[b]).data);
    poses.push_back(encoders_.encode_pose(*targets[b]).data);
    latents.push_back(encoders_.invert(*sources[b]));
  }
  std::vector<const Tensor<T>*> app_ptrs, pose_ptrs;
  for (std::size_t b = 0; b < batch; ++b) {
    app_ptrs.push_back(&apps[b]);
    pose_ptrs.push_back(&poses[b]);
  }
  const Tensor<T> f_r = fusion_.fuse(stack_features(app_ptrs), stack_features(pose_ptrs), batch,
                                     tape ? &tape->fusion : nullptr);
  const OffsetPredictions<T> pred = hypernet_.forward(f_r, batch, tape ? &tape->hypernet : nullptr);

  std::vector<Tensor<T>> out;
  if (tape) tape->samples.assign(batch, {});
  for (std::size_t b = 0; b < batch; ++b) {
    KernelSet<T> kernels = apply_offsets(arch_, generator_.base_kernels(), expand_offsets(arch_, pred, b));
    if (tape) {
      auto& s = tape->samples[b];
      out.push_back(generator_.synthesize(kernels, latents[b], &s.synthesis));
      s.latent = std::move(latents[b]);
      s.kernels = std::move(kernels);
    } else {
      out.push_back(generator_.synthesize(kernels, latents[b]));
    }
  }
  return out;
}

template <class T>
Tensor<T> Reenactor<T>::reenact(const Tensor<T>& source, const Tensor<T>& target) const {
  return std::move(forward({&source}, {&target}).front());
}

template <class T>
Tensor<T> Reenactor<T>::invert_and_synthesize(const Tensor<T>& source) const {
  return generator_.synthesize(generator_.base_kernels(), encoders_.invert(source));
}

template <class T>
void Reenactor<T>::backward(const ReenactTape<T>& tape, const std::vector<Tensor<T>>& d_outputs) {
  const std::size_t batch = tape.samples.size();
  if (d_outputs.size() != batch) throw ShapeError("one output gradient per sample expected");
  OffsetPredictions<T> d_pred;
  for (std::size_t layer : controlled_) {
    const LayerSpec& l = arch_.layer(layer);
    d_pred.emplace(layer, Tensor<T>({batch, l.out_channels, l.in_channels}));
  }
  for (std::size_t b = 0; b < batch; ++b) {
    const auto d_kernels = generator_.backward_kernels(tape.samples[b].synthesis, d_outputs[b], controlled_);
    for (const auto& [layer, dk] : d_kernels) {
      const Tensor<T> r = reduce_offset_gradient(dk, generator_.base_kernels()[layer]);
      Tensor<T>& dst = d_pred.at(layer);
      std::copy(r.values().begin(), r.values().end(), dst.data() + b * r.size());
    }
  }
  const Tensor<T> d_fr = hypernet_.backward(tape.hypernet, d_pred);
  fusion_.backward(tape.fusion, d_fr, nullptr, nullptr);
}

template <class T>
std::vector<nn::Param<T>*> Reenactor<T>::trainable_params() {
  std::vector<nn::Param<T>*> out = fusion_.params();
  for (auto* p : hypernet_.params()) out.push_back(p);
  return out;
}

template <class T>
std::uint64_t Reenactor<T>::frozen_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const Tensor<T>& t) {
    for (std::size_t d : t.shape()) h = fnv_mix(h, &d, sizeof d);
    h = fnv_mix(h, t.data(), t.size() * sizeof(T));
  };
  for (const auto& [name, t] : generator_.named_tensors()) mix(*t);
  for (const Tensor<T>* t : encoders_.frozen_tensors()) mix(*t);
  return h;
}

template class Reenactor<float>;
template class Reenactor<double>;

}  // namespace facereenact
