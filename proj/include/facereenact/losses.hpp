#pragma once

// Loss terms and the per-task weighted objectives. Every term compares a
// reference image a with a generated image b and can also return dL/db.

#include <array>
#include <string>

#include "facereenact/encoders.hpp"

namespace facereenact {

struct LossWeights {
  double lambda_pix = 10.0;
  double lambda_lpips = 5.0;
  double lambda_id = 10.0;
  double lambda_sh = 0.5;
  double lambda_g = 2.0;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

enum class LossTerm { Pix, Lpips, Id, Shape, Gaze };
inline constexpr std::size_t kNumLossTerms = 5;
const char* loss_term_name(LossTerm t);

/// Inversion: real vs reconstruction. Self: target vs reenacted.
/// Cross: identity against the source, shape against the target, nothing else.
enum class Task { Inversion, Self, Cross };
const char* task_name(Task t);
Task parse_task(const std::string& name);

struct LossReport {
  std::array<double, kNumLossTerms> raw{};
  std::array<double, kNumLossTerms> weighted{};
  std::array<bool, kNumLossTerms> included{};
  double total = 0;

  double raw_of(LossTerm t) const { return raw[static_cast<std::size_t>(t)]; }
  bool all_finite() const;
};

struct LossOptions {
  LossWeights weights;
  bool cross_gaze = false;  // also apply the gaze term to cross samples
};

/// Terms active for a task under the given options.
std::array<bool, kNumLossTerms> task_terms(Task task, const LossOptions& options);

/// Weights raw values into a report; terms not active for the task are zeroed.
LossReport combine_terms(Task task, const std::array<double, kNumLossTerms>& raw,
                         const LossOptions& options);

/// Mean absolute difference.
template <class T>
double l_pix(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>* d_b = nullptr);

/// Mean over encoder levels of the spatially averaged squared distance
/// between channel-unit-normalized activations.
template <class T>
double l_lpips(const Tensor<T>& a, const Tensor<T>& b, const ImageEncoder<T>& extractor,
               Tensor<T>* d_b = nullptr);

/// Cosine of two embeddings (unit-normalized here, so any scale works).
template <class T>
double embedding_cosine(const Tensor<T>& a, const Tensor<T>& b);

/// 1 - cos between identity embeddings.
template <class T>
double l_id(const Tensor<T>& a, const Tensor<T>& b, const EncoderSuite<T>& suite,
            Tensor<T>* d_b = nullptr);

/// Mean absolute difference of shape descriptors.
template <class T>
double l_shape(const Tensor<T>& a, const Tensor<T>& b, const EncoderSuite<T>& suite,
               Tensor<T>* d_b = nullptr);
double l_shape(const PoseParams& a, const PoseParams& b, const ExpressionBasis& basis);

/// Euclidean distance between gaze estimates.
template <class T>
double l_gaze(const Tensor<T>& a, const Tensor<T>& b, const EncoderSuite<T>& suite,
              Tensor<T>* d_b = nullptr);

template <class T>
struct LossSample {
  const Tensor<T>* source = nullptr;
  const Tensor<T>* target = nullptr;
  const Tensor<T>* generated = nullptr;  // reconstruction or reenactment
  Task task = Task::Self;
};

/// Weighted objective for one sample; d_generated receives dTotal/dgenerated.
template <class T>
LossReport phase_objective(const LossSample<T>& sample, const EncoderSuite<T>& suite,
                           const LossOptions& options, Tensor<T>* d_generated = nullptr);

}  // namespace facereenact
