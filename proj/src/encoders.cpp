#include "facereenact/encoders.hpp"

#include <cmath>

#include "facereenact/kernels.hpp"

namespace facereenact {

namespace {

constexpr double kEncoderSlope = 0.2;
constexpr std::size_t kThumb = 4;

}  // namespace

std::size_t feature_channels(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::Appearance: return kAppearanceChannels;
    case FeatureKind::Pose: return kPoseChannels;
    case FeatureKind::Fused: return kFusedChannels;
  }
  throw std::logic_error("unknown feature kind");
}

const char* feature_kind_name(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::Appearance: return "appearance";
    case FeatureKind::Pose: return "pose";
    case FeatureKind::Fused: return "fused";
  }
  return "?";
}

template <class T>
void FeatureMap<T>::validate() const {
  require_shape(data.shape(), {feature_channels(kind), kFeatureGrid, kFeatureGrid},
                std::string(feature_kind_name(kind)) + " features");
  if (!data.all_finite()) {
    throw ShapeError(std::string(feature_kind_name(kind)) + " features contain non-finite values");
  }
}

template <class T>
void require_image(const Tensor<T>& image, std::size_t resolution, const std::string& what) {
  require_shape(image.shape(), {3, resolution, resolution}, what);
}

template <class T>
ConvEncoderStandIn<T>::ConvEncoderStandIn(EncoderManifest manifest, FeatureKind kind,
                                          bool mean_normalize)
    : manifest_(std::move(manifest)),
      kind_(kind),
      mean_normalize_(mean_normalize),
      conv1_(manifest_.role + ".conv1", {3, 32, 3, 2, 1}, true),
      conv2_(manifest_.role + ".conv2", {32, 64, 3, 2, 1}, true),
      head_(manifest_.role + ".head", {64, feature_channels(kind), 1, 1, 0}, false) {
  if (manifest_.input_resolution < 4) throw ConfigError("encoder input resolution too small");
  Rng rng(manifest_.seed);
  conv1_.init_fan_in(rng, std::sqrt(2.0));
  conv2_.init_fan_in(rng, std::sqrt(2.0));
  head_.init_fan_in(rng, 1.0);
  // Small random biases keep the activations from being purely odd in the input.
  for (auto* conv : {&conv1_, &conv2_}) nn::fill_normal(conv->bias().value, rng, 0.05);
}

template <class T>
FeatureMap<T> ConvEncoderStandIn<T>::encode(const Tensor<T>& image, EncoderTape<T>* tape) const {
  const std::size_t r = manifest_.input_resolution;
  require_image(image, r, manifest_.role + " encoder input");
  Tensor<T> x = image;
  if (mean_normalize_) {
    const std::size_t hw = r * r;
    for (std::size_t c = 0; c < 3; ++c) {
      T* plane = x.data() + c * hw;
      double mean = 0;
      for (std::size_t i = 0; i < hw; ++i) mean += plane[i];
      mean /= static_cast<double>(hw);
      for (std::size_t i = 0; i < hw; ++i) plane[i] -= static_cast<T>(mean);
    }
  }
  const T slope = static_cast<T>(kEncoderSlope);
  EncoderTape<T> local;
  EncoderTape<T>& t = tape ? *tape : local;
  t.convs.assign(3, {});
  t.levels.clear();
  t.resolution = r;

  const std::size_t h1 = conv1_.geometry().out_size(r);
  Tensor<T> a1 = conv1_.forward(x, 1, r, r, &t.convs[0]).reshaped({32, h1, h1});
  nn::leaky_relu_forward(a1, slope);
  const std::size_t h2 = conv2_.geometry().out_size(h1);
  Tensor<T> a2 = conv2_.forward(a1, 1, h1, h1, &t.convs[1]).reshaped({64, h2, h2});
  nn::leaky_relu_forward(a2, slope);
  const Tensor<T> pooled = nn::adaptive_avg_pool(a2, kFeatureGrid, kFeatureGrid);
  FeatureMap<T> out;
  out.kind = kind_;
  out.data = head_.forward(pooled, 1, kFeatureGrid, kFeatureGrid, &t.convs[2])
                 .reshaped({feature_channels(kind_), kFeatureGrid, kFeatureGrid});
  t.levels.push_back(std::move(a1));
  t.levels.push_back(std::move(a2));
  return out;
}

template <class T>
Tensor<T> ConvEncoderStandIn<T>::backward(const EncoderTape<T>& tape, const Tensor<T>* d_features,
                                          const std::vector<Tensor<T>>* d_levels) const {
  if (tape.levels.size() != 2 || tape.convs.size() != 3) throw ShapeError("encoder tape is empty");
  if (d_levels && d_levels->size() != 2) throw ShapeError("encoder level gradients");
  const T slope = static_cast<T>(kEncoderSlope);
  const Tensor<T>& a1 = tape.levels[0];
  const Tensor<T>& a2 = tape.levels[1];
  Tensor<T> d_a2(a2.shape());
  if (d_features) {
    require_shape(d_features->shape(), {feature_channels(kind_), kFeatureGrid, kFeatureGrid},
                  "feature gradient");
    const Tensor<T> d_pooled = head_.backward_input(tape.convs[2], *d_features);
    d_a2 = nn::adaptive_avg_pool_backward(d_pooled.reshaped({64, kFeatureGrid, kFeatureGrid}),
                                          a2.dim(1), a2.dim(2));
  }
  if (d_levels) kernels::axpy<T>(d_a2.size(), T(1), (*d_levels)[1].data(), d_a2.data());
  nn::leaky_relu_backward(a2, slope, d_a2);
  Tensor<T> d_a1 = conv2_.backward_input(tape.convs[1], d_a2).reshaped(a1.shape());
  if (d_levels) kernels::axpy<T>(d_a1.size(), T(1), (*d_levels)[0].data(), d_a1.data());
  nn::leaky_relu_backward(a1, slope, d_a1);
  const std::size_t r = tape.resolution;
  Tensor<T> dx = conv1_.backward_input(tape.convs[0], d_a1).reshaped({3, r, r});
  if (mean_normalize_) {
    const std::size_t hw = r * r;
    for (std::size_t c = 0; c < 3; ++c) {
      T* plane = dx.data() + c * hw;
      double mean = 0;
      for (std::size_t i = 0; i < hw; ++i) mean += plane[i];
      mean /= static_cast<double>(hw);
      for (std::size_t i = 0; i < hw; ++i) plane[i] -= static_cast<T>(mean);
    }
  }
  return dx;
}

template <class T>
std::vector<const Tensor<T>*> ConvEncoderStandIn<T>::tensors() const {
  return {&conv1_.weight().value, &conv1_.bias().value, &conv2_.weight().value,
          &conv2_.bias().value, &head_.weight().value};
}

template <class T>
IdentityHead<T>::IdentityHead(std::size_t dim, std::uint64_t seed)
    : weight_({dim, kAppearanceChannels}) {
  if (dim == 0) throw ConfigError("identity embedding dimension must be positive");
  Rng rng(seed);
  nn::fill_normal(weight_, rng, 1.0 / std::sqrt(static_cast<double>(kAppearanceChannels)));
}

namespace {

template <class T>
Tensor<T> global_average(const FeatureMap<T>& f) {
  f.validate();
  const std::size_t hw = kFeatureGrid * kFeatureGrid;
  Tensor<T> g({kAppearanceChannels});
  for (std::size_t c = 0; c < kAppearanceChannels; ++c) {
    T s = T(0);
    for (std::size_t i = 0; i < hw; ++i) s += f.data[c * hw + i];
    g[c] = s / static_cast<T>(hw);
  }
  return g;
}

}  // namespace

template <class T>
Tensor<T> IdentityHead<T>::embed(const FeatureMap<T>& f_app) const {
  if (f_app.kind != FeatureKind::Appearance) throw ShapeError("identity head needs appearance features");
  const Tensor<T> g = global_average(f_app);
  Tensor<T> e({dim()});
  kernels::gemm<T>(false, false, dim(), 1, kAppearanceChannels, T(1), weight_.data(),
                   kAppearanceChannels, g.data(), 1, T(0), e.data(), 1);
  const T norm = std::sqrt(kernels::dot<T>(e.size(), e.data(), e.data()));
  if (!(norm > T(0))) throw std::runtime_error("identity embedding has zero norm");
  for (auto& v : e.values()) v /= norm;
  return e;
}

template <class T>
Tensor<T> IdentityHead<T>::backward(const FeatureMap<T>& f_app, const Tensor<T>& embedding,
                                    const Tensor<T>& d_embedding) const {
  const Tensor<T> g = global_average(f_app);
  Tensor<T> raw({dim()});
  kernels::gemm<T>(false, false, dim(), 1, kAppearanceChannels, T(1), weight_.data(),
                   kAppearanceChannels, g.data(), 1, T(0), raw.data(), 1);
  const T norm = std::sqrt(kernels::dot<T>(raw.size(), raw.data(), raw.data()));
  const T proj = kernels::dot<T>(dim(), embedding.data(), d_embedding.data());
  Tensor<T> d_raw({dim()});
  for (std::size_t i = 0; i < dim(); ++i) d_raw[i] = (d_embedding[i] - embedding[i] * proj) / norm;
  Tensor<T> d_g({kAppearanceChannels});
  kernels::gemm<T>(true, false, kAppearanceChannels, 1, dim(), T(1), weight_.data(),
                   kAppearanceChannels, d_raw.data(), 1, T(0), d_g.data(), 1);
  const std::size_t hw = kFeatureGrid * kFeatureGrid;
  Tensor<T> d_f({kAppearanceChannels, kFeatureGrid, kFeatureGrid});
  for (std::size_t c = 0; c < kAppearanceChannels; ++c) {
    const T v = d_g[c] / static_cast<T>(hw);
    for (std::size_t i = 0; i < hw; ++i) d_f[c * hw + i] = v;
  }
  return d_f;
}

template <class T>
InversionStandIn<T>::InversionStandIn(std::size_t num_styles, std::uint64_t seed, double clamp)
    : clamp_(clamp),
      weight_({num_styles, kLatentDim, 3 * kThumb * kThumb}),
      bias_({num_styles, kLatentDim}) {
  if (!(clamp > 0)) throw ConfigError("inversion clamp must be positive");
  Rng rng(seed);
  nn::fill_normal(weight_, rng, 2.0 / std::sqrt(3.0 * kThumb * kThumb));
  nn::fill_normal(bias_, rng, 0.5);
}

template <class T>
LatentCode<T> InversionStandIn<T>::invert(const Tensor<T>& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("inversion expects a 3-channel image");
  const Tensor<T> thumb = nn::adaptive_avg_pool(image, kThumb, kThumb);
  const std::size_t rows = weight_.dim(0), in = thumb.size();
  LatentCode<T> code{Tensor<T>({rows, kLatentDim})};
  for (std::size_t r = 0; r < rows; ++r) {
    T* out = code.styles.data() + r * kLatentDim;
    kernels::gemm<T>(false, false, kLatentDim, 1, in, T(1), weight_.data() + r * kLatentDim * in, in,
                     thumb.data(), 1, T(0), out, 1);
    const T c = static_cast<T>(clamp_);
    for (std::size_t i = 0; i < kLatentDim; ++i) {
      out[i] = c * std::tanh((out[i] + bias_[r * kLatentDim + i]) / c);
    }
  }
  return code;
}

template <class T>
EncoderSuite<T>::EncoderSuite(const EncoderSuiteConfig& config, std::size_t num_styles)
    : config_(config),
      identity_(config.identity_dim, config.identity_seed),
      inversion_(num_styles, config.inversion_seed, config.inversion_clamp),
      basis_(config.expression_dim) {
  for (const auto& name : {config.appearance_encoder, config.pose_encoder}) {
    if (name != "standin") throw ConfigError("no encoder plug-in named '" + name + "' is registered");
  }
  appearance_ = std::make_unique<ConvEncoderStandIn<T>>(
      EncoderManifest{"appearance", "standin", config.resolution, "512x7x7", config.appearance_seed},
      FeatureKind::Appearance, false);
  pose_ = std::make_unique<ConvEncoderStandIn<T>>(
      EncoderManifest{"pose", "standin", config.resolution, "2048x7x7", config.pose_seed},
      FeatureKind::Pose, config.pose_mean_normalize);
}

template <class T>
FeatureMap<T> EncoderSuite<T>::encode_appearance(const Tensor<T>& image, EncoderTape<T>* tape) const {
  return appearance_->encode(image, tape);
}

template <class T>
FeatureMap<T> EncoderSuite<T>::encode_pose(const Tensor<T>& image) const {
  return pose_->encode(image);
}

template <class T>
Tensor<T> EncoderSuite<T>::identity_embedding(const Tensor<T>& image) const {
  return identity_.embed(appearance_->encode(image));
}

template <class T>
LatentCode<T> EncoderSuite<T>::invert(const Tensor<T>& image) const {
  require_image(image, config_.resolution, "inversion input");
  return inversion_.invert(image);
}

template <class T>
PoseParams EncoderSuite<T>::extract_pose_params(const Tensor<T>& image) const {
  require_image(image, config_.resolution, "pose parameter input");
  if (auto hit = oracle_.lookup(image)) return *hit;
  return estimate_pose(image, basis_).params;
}

template <class T>
std::array<double, 2> EncoderSuite<T>::estimate_gaze(const Tensor<T>& image) const {
  return extract_pose_params(image).gaze;
}

template <class T>
std::vector<EncoderManifest> EncoderSuite<T>::manifests() const {
  return {appearance_->manifest(), pose_->manifest(),
          {"identity", "standin", config_.resolution, std::to_string(config_.identity_dim) + " unit",
           config_.identity_seed},
          {"inversion", "standin", config_.resolution,
           std::to_string(inversion_.tensors()[0]->dim(0)) + "x512", config_.inversion_seed}};
}

template <class T>
std::vector<const Tensor<T>*> EncoderSuite<T>::frozen_tensors() const {
  std::vector<const Tensor<T>*> out = appearance_->tensors();
  for (const Tensor<T>* t : pose_->tensors()) out.push_back(t);
  out.push_back(&identity_.weight());
  for (const Tensor<T>* t : inversion_.tensors()) out.push_back(t);
  return out;
}

#define FACEREENACT_INSTANTIATE_ENCODERS(T)                                        \
  template struct FeatureMap<T>;                                                    \
  template void require_image<T>(const Tensor<T>&, std::size_t, const std::string&); \
  template class ConvEncoderStandIn<T>;                                             \
  template class IdentityHead<T>;                                                   \
  template class InversionStandIn<T>;                                               \
  template class EncoderSuite<T>;

FACEREENACT_INSTANTIATE_ENCODERS(float)
FACEREENACT_INSTANTIATE_ENCODERS(double)

#undef FACEREENACT_INSTANTIATE_ENCODERS

}  // namespace facereenact
