#pragma once

// Reenactment module: projects pose features to 512 channels and blends the
// two branches with learned per-position scale and shift,
//   f_r = gamma_app * f_app + beta_app + gamma_p * f_p' + beta_p.
// All maps are batched as [C, B, 7, 7].

#include <vector>

#include "facereenact/encoders.hpp"
#include "facereenact/nn.hpp"

namespace facereenact {

enum class FusionConditioning {
  Own,    // gamma/beta of a branch are computed from that branch
  Cross,  // computed from the other branch
};

struct FusionConfig {
  FusionConditioning conditioning = FusionConditioning::Own;
  double modulation_init_std = 0.01;  // gain of the gamma/beta convs relative to fan-in init
  std::uint64_t seed = 505;
};

template <class T>
struct FusionTape {
  Tensor<T> f_app, f_p, f_p_proj;
  Tensor<T> gamma_app, gamma_p;  // including the +1 offset
  std::size_t batch = 0;
};

template <class T>
class Fusion {
 public:
  explicit Fusion(FusionConfig config = {});

  const FusionConfig& config() const { return config_; }

  /// f_p [2048, B, 7, 7] -> [512, B, 7, 7]; linear, no bias.
  Tensor<T> project_pose(const Tensor<T>& f_p, std::size_t batch) const;
  /// f_app [512, B, 7, 7], f_p [2048, B, 7, 7] -> f_r [512, B, 7, 7].
  Tensor<T> fuse(const Tensor<T>& f_app, const Tensor<T>& f_p, std::size_t batch,
                 FusionTape<T>* tape = nullptr) const;
  /// Accumulates parameter gradients; returns d f_app and d f_p when requested.
  void backward(const FusionTape<T>& tape, const Tensor<T>& d_fr, Tensor<T>* d_f_app,
                Tensor<T>* d_f_p);

  /// Sets every modulation conv to zero so that gamma == 1 and beta == 0.
  void force_identity_modulation();

  std::vector<nn::Param<T>*> params();
  nn::Conv2d<T>& pose_projection() { return projection_; }
  nn::Conv2d<T>& gamma_app() { return gamma_app_; }
  nn::Conv2d<T>& beta_app() { return beta_app_; }
  nn::Conv2d<T>& gamma_p() { return gamma_p_; }
  nn::Conv2d<T>& beta_p() { return beta_p_; }

 private:
  FusionConfig config_;
  nn::Conv2d<T> projection_;
  nn::Conv2d<T> gamma_app_, beta_app_, gamma_p_, beta_p_;
};

/// Stacks per-sample [C, 7, 7] maps into [C, B, 7, 7].
template <class T>
Tensor<T> stack_features(const std::vector<const Tensor<T>*>& maps);
/// Extracts sample b of a [C, B, H, W] tensor as [C, H, W].
template <class T>
Tensor<T> unstack_sample(const Tensor<T>& batched, std::size_t b);

}  // namespace facereenact
