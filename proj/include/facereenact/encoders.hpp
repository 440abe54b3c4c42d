#pragma once

// Frozen feature extractors. Each role has an abstract interface so a real
// pretrained network can be plugged in; the fixed-seed stand-ins here are
// small conv stacks that always emit 7x7 grids.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "facereenact/face_model.hpp"
#include "facereenact/generator.hpp"
#include "facereenact/nn.hpp"
#include "facereenact/tensor.hpp"

namespace facereenact {

inline constexpr std::size_t kFeatureGrid = 7;
inline constexpr std::size_t kAppearanceChannels = 512;
inline constexpr std::size_t kPoseChannels = 2048;
inline constexpr std::size_t kFusedChannels = 512;

enum class FeatureKind { Appearance, Pose, Fused };

std::size_t feature_channels(FeatureKind kind);
const char* feature_kind_name(FeatureKind kind);

template <class T>
struct FeatureMap {
  Tensor<T> data;
  FeatureKind kind = FeatureKind::Appearance;

  /// Throws ShapeError unless data is C x 7 x 7 for the kind and finite.
  void validate() const;
};

/// Rejects anything but a 3 x R x R image at the expected resolution.
template <class T>
void require_image(const Tensor<T>& image, std::size_t resolution, const std::string& what);

/// Plug-in description recorded in run configs.
struct EncoderManifest {
  std::string role;   // appearance, pose, identity, inversion
  std::string name;   // implementation, "standin" for the built-ins
  std::size_t input_resolution = 0;
  std::string output_contract;
  std::uint64_t seed = 0;
};

/// Saved forward state of a differentiable encoder.
template <class T>
struct EncoderTape {
  std::vector<nn::ConvCache<T>> convs;
  std::vector<Tensor<T>> levels;  // post-activation intermediate maps [C, H, W]
  std::size_t resolution = 0;
};

template <class T>
class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;
  virtual const EncoderManifest& manifest() const = 0;
  virtual FeatureMap<T> encode(const Tensor<T>& image, EncoderTape<T>* tape = nullptr) const = 0;
  /// dL/dimage from gradients on the head output and/or on the tape levels.
  /// Either pointer may be null.
  virtual Tensor<T> backward(const EncoderTape<T>& tape, const Tensor<T>* d_features,
                             const std::vector<Tensor<T>>* d_levels) const = 0;
};

/// conv3x3/2 -> lrelu -> conv3x3/2 -> lrelu -> adaptive pool 7x7 -> conv1x1 head.
template <class T>
class ConvEncoderStandIn final : public ImageEncoder<T> {
 public:
  /// mean_normalize subtracts each input channel's spatial mean first, which
  /// makes the features invariant to a global brightness shift.
  ConvEncoderStandIn(EncoderManifest manifest, FeatureKind kind, bool mean_normalize);

  const EncoderManifest& manifest() const override { return manifest_; }
  FeatureMap<T> encode(const Tensor<T>& image, EncoderTape<T>* tape = nullptr) const override;
  Tensor<T> backward(const EncoderTape<T>& tape, const Tensor<T>* d_features,
                     const std::vector<Tensor<T>>* d_levels) const override;

  std::vector<const Tensor<T>*> tensors() const;

 private:
  EncoderManifest manifest_;
  FeatureKind kind_;
  bool mean_normalize_;
  nn::Conv2d<T> conv1_, conv2_, head_;
};

/// Unit-norm identity embedding: GAP of appearance features -> fixed linear map -> L2 normalize.
template <class T>
class IdentityHead {
 public:
  IdentityHead(std::size_t dim, std::uint64_t seed);
  std::size_t dim() const { return weight_.dim(0); }
  Tensor<T> embed(const FeatureMap<T>& f_app) const;
  /// dL/df_app from dL/dembedding, given the features and the embedding they produced.
  Tensor<T> backward(const FeatureMap<T>& f_app, const Tensor<T>& embedding,
                     const Tensor<T>& d_embedding) const;
  const Tensor<T>& weight() const { return weight_; }

 private:
  Tensor<T> weight_;  // [dim, 512]
};

/// Image -> W+ code through a fixed per-row random projection of a pooled thumbnail.
template <class T>
class InversionStandIn {
 public:
  InversionStandIn(std::size_t num_styles, std::uint64_t seed, double clamp = 3.0);
  LatentCode<T> invert(const Tensor<T>& image) const;
  double clamp() const { return clamp_; }
  std::vector<const Tensor<T>*> tensors() const { return {&weight_, &bias_}; }

 private:
  double clamp_;
  Tensor<T> weight_;  // [num_styles, 512, 48]
  Tensor<T> bias_;    // [num_styles, 512]
};

struct EncoderSuiteConfig {
  std::size_t resolution = 32;
  std::size_t expression_dim = kDefaultExpressionDim;
  std::size_t identity_dim = 512;
  std::uint64_t appearance_seed = 101;
  std::uint64_t pose_seed = 202;
  std::uint64_t identity_seed = 303;
  std::uint64_t inversion_seed = 404;
  bool pose_mean_normalize = true;
  double inversion_clamp = 3.0;
  std::string appearance_encoder = "standin";
  std::string pose_encoder = "standin";
};

/// Every frozen extractor the pipeline uses, plus the pose oracle. Pose
/// parameters come from the oracle for registered frames and from the
/// moment estimator otherwise.
template <class T>
class EncoderSuite {
 public:
  EncoderSuite(const EncoderSuiteConfig& config, std::size_t num_styles);

  const EncoderSuiteConfig& config() const { return config_; }
  const ImageEncoder<T>& appearance() const { return *appearance_; }
  const ImageEncoder<T>& pose() const { return *pose_; }
  const IdentityHead<T>& identity() const { return identity_; }
  const InversionStandIn<T>& inversion() const { return inversion_; }
  const ExpressionBasis& expression_basis() const { return basis_; }
  PoseOracle& oracle() { return oracle_; }
  const PoseOracle& oracle() const { return oracle_; }

  FeatureMap<T> encode_appearance(const Tensor<T>& image, EncoderTape<T>* tape = nullptr) const;
  FeatureMap<T> encode_pose(const Tensor<T>& image) const;
  Tensor<T> identity_embedding(const Tensor<T>& image) const;
  LatentCode<T> invert(const Tensor<T>& image) const;
  /// Oracle lookup when the frame is registered, estimator otherwise.
  PoseParams extract_pose_params(const Tensor<T>& image) const;
  std::array<double, 2> estimate_gaze(const Tensor<T>& image) const;

  std::vector<EncoderManifest> manifests() const;
  /// Every frozen tensor, for freeze hashing.
  std::vector<const Tensor<T>*> frozen_tensors() const;

 private:
  EncoderSuiteConfig config_;
  std::unique_ptr<ConvEncoderStandIn<T>> appearance_;
  std::unique_ptr<ConvEncoderStandIn<T>> pose_;
  IdentityHead<T> identity_;
  InversionStandIn<T> inversion_;
  ExpressionBasis basis_;
  PoseOracle oracle_;
};

}  // namespace facereenact
