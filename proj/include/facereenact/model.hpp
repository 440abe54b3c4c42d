#pragma once

// End-to-end reenactor: invert the source, encode appearance (source) and
// pose (target), fuse, predict offsets, rewrite the generator weights and
// synthesize. Only the fusion module and the hypernetwork are trainable.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "facereenact/fusion.hpp"
#include "facereenact/generator.hpp"
#include "facereenact/hypernet.hpp"

namespace facereenact {

struct ArchConfig {
  std::string name = "scaled";  // "scaled" or "canonical"
  std::size_t resolution = 32;
  std::size_t channel_cap = 64;

  GeneratorArch build() const;
  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct ModelConfig {
  ArchConfig arch;
  GeneratorConfig generator;
  EncoderSuiteConfig encoders;
  FusionConfig fusion;
  HypernetConfig hypernet;
  std::optional<BlockAssignment> assignment;  // default rule when unset
};

template <class T>
struct ReenactTape {
  struct Sample {
    LatentCode<T> latent;
    KernelSet<T> kernels;
    SynthesisTape<T> synthesis;
  };
  std::vector<Sample> samples;
  FusionTape<T> fusion;
  HypernetTape<T> hypernet;
};

template <class T>
class Reenactor {
 public:
  explicit Reenactor(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const GeneratorArch& arch() const { return arch_; }
  const Generator<T>& generator() const { return generator_; }
  const EncoderSuite<T>& encoders() const { return encoders_; }
  EncoderSuite<T>& encoders() { return encoders_; }
  Fusion<T>& fusion() { return fusion_; }
  Hypernet<T>& hypernet() { return hypernet_; }
  const Hypernet<T>& hypernet() const { return hypernet_; }

  /// One output per (source, target) pair; pass a tape to enable backward().
  std::vector<Tensor<T>> forward(const std::vector<const Tensor<T>*>& sources,
                                 const std::vector<const Tensor<T>*>& targets,
                                 ReenactTape<T>* tape = nullptr) const;
  Tensor<T> reenact(const Tensor<T>& source, const Tensor<T>& target) const;

  /// G(E(source)) with the unmodified generator.
  Tensor<T> invert_and_synthesize(const Tensor<T>& source) const;

  /// Accumulates gradients on the trainable parameters from dL/doutput.
  void backward(const ReenactTape<T>& tape, const std::vector<Tensor<T>>& d_outputs);

  std::vector<nn::Param<T>*> trainable_params();
  /// Hash over every frozen tensor (generator, encoders, inversion).
  std::uint64_t frozen_hash() const;

 private:
  ModelConfig config_;
  GeneratorArch arch_;
  Generator<T> generator_;
  EncoderSuite<T> encoders_;
  Fusion<T> fusion_;
  Hypernet<T> hypernet_;
  std::vector<std::size_t> controlled_;
};

}  // namespace facereenact
