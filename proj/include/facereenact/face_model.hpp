#pragma once

// Procedural face model used as the desk-scale data substrate.
//
// Channel layout of a rendered frame (values in [-1, 1]):
//   R  identity tone, identity texture and a background tint
//   G  soft elliptical face mask (2m - 1, m in [0, 1])
//   B  0 background; +pupil Gaussians, -mouth Gaussian
// Head yaw/pitch translate the face, roll rotates it, gaze moves the pupils
// inside fixed eye sockets, and expression changes the mouth extent through
// a fixed 2 x E basis. The same layout lets estimate_pose() read everything
// back from image moments alone.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <type_traits>
#include <vector>

#include "facereenact/rng.hpp"
#include "facereenact/tensor.hpp"

namespace facereenact {

inline constexpr std::size_t kDefaultExpressionDim = 50;
inline constexpr std::size_t kLandmarkCount = 8;

struct PoseParams {
  std::array<double, 3> euler{};  // yaw, pitch, roll in degrees
  std::vector<double> expression;
  std::vector<double> shape3d;    // identity geometry: face semi-axes (a, b)
  std::array<double, 2> gaze{};   // pitch, yaw in radians

  bool all_finite() const;
  friend bool operator==(const PoseParams&, const PoseParams&) = default;
};

/// Wraps an angle in degrees into (-180, 180].
double wrap_degrees(double deg);

/// Per-identity appearance constants.
struct FaceIdentity {
  double semi_axis_u = 0.45;  // horizontal, image units where the frame spans [-1, 1]
  double semi_axis_v = 0.6;   // vertical; always >= 1.2 * semi_axis_u
  double tone = 0.2;
  double background = -0.6;
  std::array<double, 4> texture{};  // amplitude/phase pairs of two stripe patterns

  static FaceIdentity sample(Rng& rng);
  friend bool operator==(const FaceIdentity&, const FaceIdentity&) = default;
};

/// Fixed expression basis: two orthonormal rows of length E mapping
/// coefficients to log mouth width and log mouth height.
class ExpressionBasis {
 public:
  explicit ExpressionBasis(std::size_t dim = kDefaultExpressionDim, std::uint64_t seed = 0xE1);

  std::size_t dim() const { return dim_; }
  /// (U_w . e, U_h . e)
  std::array<double, 2> project(const std::vector<double>& e) const;
  /// Minimum-norm e with project(e) == z.
  std::vector<double> lift(const std::array<double, 2>& z) const;
  const std::vector<double>& row(std::size_t r) const { return rows_[r]; }

 private:
  std::size_t dim_;
  std::array<std::vector<double>, 2> rows_;
};

struct FaceGeometry {
  static constexpr double kCenterPerRadian = 0.5;
  static constexpr double kEyeU = 0.22;
  static constexpr double kEyeV = -0.18;
  static constexpr double kGazeReach = 0.3;
  static constexpr double kPupilSigma = 0.07;
  static constexpr double kMouthV = 0.3;
  static constexpr double kMouthWidth = 0.16;
  static constexpr double kMouthHeight = 0.07;
  static constexpr double kMaskSharpness = 10.0;
};

/// Renders one frame [3, R, R].
Tensor<float> render_face(const FaceIdentity& id, const PoseParams& pose,
                          const ExpressionBasis& basis, std::size_t resolution);

/// Rounds to the 8-bit grid a PNG round trip would produce.
void quantize_8bit(Tensor<float>& image);

/// Pose descriptor fed to the shape loss: euler (radians), expression, then
/// kLandmarkCount 2-D landmarks synthesized from pose and mouth extent.
std::vector<double> shape_descriptor(const PoseParams& p, const ExpressionBasis& basis);
/// Transposed Jacobian of shape_descriptor applied to d_desc, returned as
/// gradients on euler (per degree), expression and gaze.
PoseParams shape_descriptor_backward(const PoseParams& p, const ExpressionBasis& basis,
                                     const std::vector<double>& d_desc);

/// Moment-based estimate and its gradient plumbing.
struct PoseEstimate {
  PoseParams params;
  /// d params / d aggregates, flattened row-major [num_outputs, num_aggregates].
  std::vector<double> jacobian;
  std::vector<double> aggregates;
};

/// Reads pose, expression, gaze and shape back from an image using only
/// channel moments. Differentiable almost everywhere.
template <class T>
PoseEstimate estimate_pose(const Tensor<T>& image, const ExpressionBasis& basis);

/// Chains dL/dparams (laid out as a PoseParams of gradients) back to the image.
template <class T>
Tensor<T> estimate_pose_backward(const Tensor<T>& image, const PoseEstimate& estimate,
                                 const ExpressionBasis& basis, const PoseParams& d_params);

/// Ground-truth lookup for frames produced by this artifact, keyed by a hash
/// of the exact pixel values.
class PoseOracle {
 public:
  void add(const Tensor<float>& image, const PoseParams& params);
  std::optional<PoseParams> lookup(const Tensor<float>& image) const;
  template <class T>
  std::optional<PoseParams> lookup(const Tensor<T>& image) const {
    if constexpr (std::is_same_v<T, float>) {
      return lookup(static_cast<const Tensor<float>&>(image));
    } else {
      return lookup(image.template cast<float>());
    }
  }
  std::size_t size() const { return table_.size(); }

 private:
  std::multimap<std::uint64_t, std::pair<Tensor<float>, PoseParams>> table_;
};

std::uint64_t image_hash(const Tensor<float>& image);

}  // namespace facereenact
