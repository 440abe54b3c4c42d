#include "facereenact/face_model.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "ceres/jet.h"

namespace facereenact {

namespace {

constexpr double kDegPerRad = 180.0 / std::numbers::pi;
constexpr double kBlobEps = 0.02;    // smoothing width separating pupil and mouth mass
constexpr double kMassFloor = 1e-5;  // keeps centroids defined on blank channels
constexpr double kEulerBound = 90.0;
constexpr double kGazeBound = 1.0;

constexpr std::size_t kAggregates = 15;
constexpr std::size_t kOutputs = 9;  // yaw pitch roll | a b | gaze pitch, yaw | z_w z_h

double pixel_coord(std::size_t i, std::size_t n) {
  return (static_cast<double>(i) + 0.5) / static_cast<double>(n) * 2.0 - 1.0;
}

// max(x, 0)^3 / (x^2 + eps^2): C2, exactly zero for x <= 0, ~x for x >> eps.
double soft_plus_zero(double x) { return x > 0 ? x * x * x / (x * x + kBlobEps * kBlobEps) : 0.0; }
double soft_plus_zero_grad(double x) {
  if (x <= 0) return 0.0;
  const double d = x * x + kBlobEps * kBlobEps;
  return x * x * (x * x + 3 * kBlobEps * kBlobEps) / (d * d);
}

template <class S>
S positive_guard(const S& x) {
  using std::sqrt;
  return 0.5 * (x + sqrt(x * x + S(1e-12)));
}

// Identity up to 80% of the bound, then a tanh knee that never exceeds it.
template <class S>
S soft_clamp(const S& x, double bound) {
  using std::tanh;
  const double knee = 0.8 * bound;
  const double room = bound - knee;
  if (x > S(knee)) return S(knee) + room * tanh((x - knee) / room);
  if (x < S(-knee)) return S(-knee) + room * tanh((x + knee) / room);
  return x;
}

}  // namespace

bool PoseParams::all_finite() const {
  auto finite = [](double v) { return std::isfinite(v); };
  return std::all_of(euler.begin(), euler.end(), finite) &&
         std::all_of(expression.begin(), expression.end(), finite) &&
         std::all_of(shape3d.begin(), shape3d.end(), finite) &&
         std::all_of(gaze.begin(), gaze.end(), finite);
}

double wrap_degrees(double deg) {
  double r = std::fmod(deg, 360.0);
  if (r <= -180.0) r += 360.0;
  if (r > 180.0) r -= 360.0;
  return r;
}

FaceIdentity FaceIdentity::sample(Rng& rng) {
  FaceIdentity id;
  id.semi_axis_u = rng.uniform(0.36, 0.46);
  id.semi_axis_v = id.semi_axis_u * rng.uniform(1.2, 1.4);
  id.tone = rng.uniform(-0.2, 0.6);
  id.background = rng.uniform(-0.9, -0.4);
  id.texture = {rng.uniform(0.0, 0.25), rng.uniform(0.0, 2 * std::numbers::pi),
                rng.uniform(0.0, 0.25), rng.uniform(0.0, 2 * std::numbers::pi)};
  return id;
}

ExpressionBasis::ExpressionBasis(std::size_t dim, std::uint64_t seed) : dim_(dim) {
  if (dim < 2) throw std::invalid_argument("expression basis needs at least 2 coefficients");
  Rng rng(seed);
  for (auto& r : rows_) {
    r.resize(dim);
    for (auto& v : r) v = rng.normal();
  }
  // Gram-Schmidt, so lift() is just the transpose.
  auto normalize = [](std::vector<double>& v) {
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
  };
  normalize(rows_[0]);
  double d = 0;
  for (std::size_t i = 0; i < dim; ++i) d += rows_[0][i] * rows_[1][i];
  for (std::size_t i = 0; i < dim; ++i) rows_[1][i] -= d * rows_[0][i];
  normalize(rows_[1]);
}

std::array<double, 2> ExpressionBasis::project(const std::vector<double>& e) const {
  if (e.size() != dim_) {
    throw ShapeError("expression has " + std::to_string(e.size()) + " coefficients, basis expects " +
                     std::to_string(dim_));
  }
  std::array<double, 2> z{};
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t i = 0; i < dim_; ++i) z[r] += rows_[r][i] * e[i];
  }
  return z;
}

std::vector<double> ExpressionBasis::lift(const std::array<double, 2>& z) const {
  std::vector<double> e(dim_);
  for (std::size_t i = 0; i < dim_; ++i) e[i] = rows_[0][i] * z[0] + rows_[1][i] * z[1];
  return e;
}

Tensor<float> render_face(const FaceIdentity& id, const PoseParams& pose,
                          const ExpressionBasis& basis, std::size_t resolution) {
  using G = FaceGeometry;
  const double cx = G::kCenterPerRadian * pose.euler[0] / kDegPerRad;
  const double cy = G::kCenterPerRadian * pose.euler[1] / kDegPerRad;
  const double roll = pose.euler[2] / kDegPerRad;
  const double co = std::cos(roll), si = std::sin(roll);
  const auto z = basis.project(pose.expression);
  const double mouth_w = G::kMouthWidth * std::exp(z[0]);
  const double mouth_h = G::kMouthHeight * std::exp(z[1]);
  const double pupil_du = G::kGazeReach * pose.gaze[1];
  const double pupil_dv = G::kGazeReach * pose.gaze[0];
  const double ps2 = 2 * G::kPupilSigma * G::kPupilSigma;

  Tensor<float> img({3, resolution, resolution});
  for (std::size_t i = 0; i < resolution; ++i) {
    const double y = pixel_coord(i, resolution);
    for (std::size_t j = 0; j < resolution; ++j) {
      const double x = pixel_coord(j, resolution);
      const double dx = x - cx, dy = y - cy;
      const double u = co * dx + si * dy;
      const double v = -si * dx + co * dy;
      const double r2 = (u / id.semi_axis_u) * (u / id.semi_axis_u) +
                        (v / id.semi_axis_v) * (v / id.semi_axis_v);
      const double m = 1.0 / (1.0 + std::exp(-G::kMaskSharpness * (1.0 - r2)));
      const double texture = id.texture[0] * std::sin(9.0 * u + id.texture[1]) +
                             id.texture[2] * std::sin(7.0 * v + id.texture[3]);
      const double red = id.background * (1 - m) + (id.tone + texture) * m;

      double pupils = 0;
      for (double side : {-1.0, 1.0}) {
        const double pu = u - (side * G::kEyeU + pupil_du);
        const double pv = v - (G::kEyeV + pupil_dv);
        pupils += std::exp(-(pu * pu + pv * pv) / ps2);
      }
      const double mu = u / mouth_w, mv = (v - G::kMouthV) / mouth_h;
      const double mouth = std::exp(-0.5 * (mu * mu + mv * mv));

      img.at(0, i, j) = static_cast<float>(std::clamp(red, -1.0, 1.0));
      img.at(1, i, j) = static_cast<float>(2 * m - 1);
      img.at(2, i, j) = static_cast<float>(std::clamp(pupils - mouth, -1.0, 1.0));
    }
  }
  return img;
}

void quantize_8bit(Tensor<float>& image) {
  for (auto& v : image.values()) {
    const double level = std::round((std::clamp(static_cast<double>(v), -1.0, 1.0) + 1.0) * 127.5);
    v = static_cast<float>(level / 127.5 - 1.0);
  }
}

namespace {

using Jet5 = ceres::Jet<double, 5>;

// Landmarks from (yaw, pitch, roll in degrees, z_w, z_h).
std::array<Jet5, 2 * kLandmarkCount> landmarks(const std::array<Jet5, 5>& in) {
  using G = FaceGeometry;
  const Jet5 cx = G::kCenterPerRadian * in[0] / kDegPerRad;
  const Jet5 cy = G::kCenterPerRadian * in[1] / kDegPerRad;
  const Jet5 roll = in[2] / kDegPerRad;
  const Jet5 co = cos(roll), si = sin(roll);
  const Jet5 mw = G::kMouthWidth * exp(in[3]);
  const Jet5 mh = G::kMouthHeight * exp(in[4]);
  const std::array<std::array<Jet5, 2>, kLandmarkCount> face_frame = {{
      {Jet5(-G::kEyeU), Jet5(G::kEyeV)},
      {Jet5(G::kEyeU), Jet5(G::kEyeV)},
      {Jet5(-G::kEyeU - 0.08), Jet5(G::kEyeV)},
      {Jet5(G::kEyeU + 0.08), Jet5(G::kEyeV)},
      {-2.0 * mw, Jet5(G::kMouthV)},
      {2.0 * mw, Jet5(G::kMouthV)},
      {Jet5(0.0), G::kMouthV - 2.0 * mh},
      {Jet5(0.0), G::kMouthV + 2.0 * mh},
  }};
  std::array<Jet5, 2 * kLandmarkCount> out;
  for (std::size_t k = 0; k < kLandmarkCount; ++k) {
    const Jet5& u = face_frame[k][0];
    const Jet5& v = face_frame[k][1];
    out[2 * k] = cx + co * u - si * v;
    out[2 * k + 1] = cy + si * u + co * v;
  }
  return out;
}

std::array<Jet5, 5> landmark_inputs(const PoseParams& p, const ExpressionBasis& basis) {
  const auto z = basis.project(p.expression);
  const double vals[5] = {p.euler[0], p.euler[1], p.euler[2], z[0], z[1]};
  std::array<Jet5, 5> in;
  for (int i = 0; i < 5; ++i) in[i] = Jet5(vals[i], i);
  return in;
}

}  // namespace

std::vector<double> shape_descriptor(const PoseParams& p, const ExpressionBasis& basis) {
  std::vector<double> d;
  d.reserve(3 + p.expression.size() + 2 * kLandmarkCount);
  for (double e : p.euler) d.push_back(e / kDegPerRad);
  d.insert(d.end(), p.expression.begin(), p.expression.end());
  for (const Jet5& l : landmarks(landmark_inputs(p, basis))) d.push_back(l.a);
  return d;
}

PoseParams shape_descriptor_backward(const PoseParams& p, const ExpressionBasis& basis,
                                     const std::vector<double>& d_desc) {
  const std::size_t e = p.expression.size();
  if (d_desc.size() != 3 + e + 2 * kLandmarkCount) throw ShapeError("descriptor gradient size");
  PoseParams g;
  g.expression.assign(e, 0.0);
  g.shape3d.assign(p.shape3d.size(), 0.0);
  for (int i = 0; i < 3; ++i) g.euler[i] = d_desc[i] / kDegPerRad;
  for (std::size_t i = 0; i < e; ++i) g.expression[i] = d_desc[3 + i];
  const auto lm = landmarks(landmark_inputs(p, basis));
  std::array<double, 5> d_in{};
  for (std::size_t k = 0; k < lm.size(); ++k) {
    for (int i = 0; i < 5; ++i) d_in[i] += d_desc[3 + e + k] * lm[k].v[i];
  }
  for (int i = 0; i < 3; ++i) g.euler[i] += d_in[i];
  for (std::size_t i = 0; i < e; ++i) {
    g.expression[i] += basis.row(0)[i] * d_in[3] + basis.row(1)[i] * d_in[4];
  }
  return g;
}

namespace {

using Jet15 = ceres::Jet<double, kAggregates>;

// Closed-form read-out from the 15 channel moments.
std::array<Jet15, kOutputs> read_out(const std::array<Jet15, kAggregates>& a) {
  using G = FaceGeometry;
  const Jet15 m0 = positive_guard(a[0]) + kMassFloor;
  const Jet15 cx = a[1] / m0, cy = a[2] / m0;
  const Jet15 cxx = a[3] / m0 - cx * cx;
  const Jet15 cxy = a[4] / m0 - cx * cy;
  const Jet15 cyy = a[5] / m0 - cy * cy;
  const Jet15 roll = 0.5 * atan2(-2.0 * cxy, cyy - cxx);
  const Jet15 co = cos(roll), si = sin(roll);
  const Jet15 var_u = co * co * cxx + 2.0 * co * si * cxy + si * si * cyy;
  const Jet15 var_v = si * si * cxx - 2.0 * co * si * cxy + co * co * cyy;

  const Jet15 p0 = positive_guard(a[6]) + kMassFloor;
  const Jet15 pdx = a[7] / p0 - cx, pdy = a[8] / p0 - cy;
  const Jet15 pu = co * pdx + si * pdy;
  const Jet15 pv = -si * pdx + co * pdy;

  const Jet15 q0 = positive_guard(a[9]) + kMassFloor;
  const Jet15 qx = a[10] / q0, qy = a[11] / q0;
  const Jet15 qxx = a[12] / q0 - qx * qx;
  const Jet15 qxy = a[13] / q0 - qx * qy;
  const Jet15 qyy = a[14] / q0 - qy * qy;
  const Jet15 mouth_uu = co * co * qxx + 2.0 * co * si * qxy + si * si * qyy;
  const Jet15 mouth_vv = si * si * qxx - 2.0 * co * si * qxy + co * co * qyy;

  std::array<Jet15, kOutputs> out;
  out[0] = soft_clamp(Jet15(kDegPerRad) * cx / G::kCenterPerRadian, kEulerBound);
  out[1] = soft_clamp(Jet15(kDegPerRad) * cy / G::kCenterPerRadian, kEulerBound);
  out[2] = soft_clamp(Jet15(kDegPerRad) * roll, kEulerBound);
  out[3] = 2.0 * sqrt(positive_guard(var_u) + 1e-12);
  out[4] = 2.0 * sqrt(positive_guard(var_v) + 1e-12);
  out[5] = soft_clamp((pv - G::kEyeV) / G::kGazeReach, kGazeBound);
  out[6] = soft_clamp(pu / G::kGazeReach, kGazeBound);
  out[7] = 0.5 * log(positive_guard(mouth_uu) + 1e-8) - std::log(G::kMouthWidth);
  out[8] = 0.5 * log(positive_guard(mouth_vv) + 1e-8) - std::log(G::kMouthHeight);
  return out;
}

}  // namespace

template <class T>
PoseEstimate estimate_pose(const Tensor<T>& image, const ExpressionBasis& basis) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != image.dim(2)) {
    throw ShapeError("pose estimator expects a square 3-channel image, got " +
                     shape_string(image.shape()));
  }
  const std::size_t n = image.dim(1);
  const double inv = 1.0 / static_cast<double>(n * n);
  std::array<double, kAggregates> acc{};
  for (std::size_t i = 0; i < n; ++i) {
    const double y = pixel_coord(i, n);
    for (std::size_t j = 0; j < n; ++j) {
      const double x = pixel_coord(j, n);
      const double m = 0.5 * (static_cast<double>(image.at(1, i, j)) + 1.0);
      const double b = static_cast<double>(image.at(2, i, j));
      const double p = soft_plus_zero(b), q = soft_plus_zero(-b);
      const double mono[6] = {1, x, y, x * x, x * y, y * y};
      for (int k = 0; k < 6; ++k) acc[k] += m * mono[k];
      for (int k = 0; k < 3; ++k) acc[6 + k] += p * mono[k];
      for (int k = 0; k < 6; ++k) acc[9 + k] += q * mono[k];
    }
  }
  std::array<Jet15, kAggregates> in;
  for (std::size_t k = 0; k < kAggregates; ++k) in[k] = Jet15(acc[k] * inv, static_cast<int>(k));
  const auto out = read_out(in);

  PoseEstimate est;
  est.aggregates.assign(in.size(), 0.0);
  for (std::size_t k = 0; k < kAggregates; ++k) est.aggregates[k] = in[k].a;
  est.jacobian.resize(kOutputs * kAggregates);
  for (std::size_t o = 0; o < kOutputs; ++o) {
    for (std::size_t k = 0; k < kAggregates; ++k) est.jacobian[o * kAggregates + k] = out[o].v[k];
  }
  PoseParams& p = est.params;
  p.euler = {out[0].a, out[1].a, wrap_degrees(out[2].a)};
  p.shape3d = {out[3].a, out[4].a};
  p.gaze = {out[5].a, out[6].a};
  p.expression = basis.lift({out[7].a, out[8].a});
  return est;
}

template <class T>
Tensor<T> estimate_pose_backward(const Tensor<T>& image, const PoseEstimate& estimate,
                                 const ExpressionBasis& basis, const PoseParams& d_params) {
  if (d_params.expression.size() != basis.dim()) throw ShapeError("pose gradient expression size");
  if (estimate.jacobian.size() != kOutputs * kAggregates) throw ShapeError("pose estimate jacobian");
  // expression = U^T z, so dL/dz = U dL/dexpression.
  const auto dz = basis.project(d_params.expression);
  double d_out[kOutputs] = {d_params.euler[0], d_params.euler[1], d_params.euler[2], 0, 0,
                            d_params.gaze[0],  d_params.gaze[1],  dz[0], dz[1]};
  if (d_params.shape3d.size() == 2) {
    d_out[3] = d_params.shape3d[0];
    d_out[4] = d_params.shape3d[1];
  }
  const std::size_t n = image.dim(1);
  const double inv = 1.0 / static_cast<double>(n * n);
  double d_agg[kAggregates] = {};
  for (std::size_t o = 0; o < kOutputs; ++o) {
    for (std::size_t k = 0; k < kAggregates; ++k) {
      d_agg[k] += d_out[o] * estimate.jacobian[o * kAggregates + k];
    }
  }
  for (double& v : d_agg) v *= inv;

  Tensor<T> grad(image.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double y = pixel_coord(i, n);
    for (std::size_t j = 0; j < n; ++j) {
      const double x = pixel_coord(j, n);
      const double mono[6] = {1, x, y, x * x, x * y, y * y};
      double dm = 0, dp = 0, dq = 0;
      for (int k = 0; k < 6; ++k) dm += d_agg[k] * mono[k];
      for (int k = 0; k < 3; ++k) dp += d_agg[6 + k] * mono[k];
      for (int k = 0; k < 6; ++k) dq += d_agg[9 + k] * mono[k];
      const double b = static_cast<double>(image.at(2, i, j));
      grad.at(1, i, j) = static_cast<T>(0.5 * dm);
      grad.at(2, i, j) = static_cast<T>(dp * soft_plus_zero_grad(b) - dq * soft_plus_zero_grad(-b));
    }
  }
  return grad;
}

template PoseEstimate estimate_pose<float>(const Tensor<float>&, const ExpressionBasis&);
template PoseEstimate estimate_pose<double>(const Tensor<double>&, const ExpressionBasis&);
template Tensor<float> estimate_pose_backward<float>(const Tensor<float>&, const PoseEstimate&,
                                                     const ExpressionBasis&, const PoseParams&);
template Tensor<double> estimate_pose_backward<double>(const Tensor<double>&, const PoseEstimate&,
                                                       const ExpressionBasis&, const PoseParams&);

std::uint64_t image_hash(const Tensor<float>& image) {
  // FNV-1a over shape and raw bytes.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const unsigned char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (std::size_t d : image.shape()) mix(reinterpret_cast<const unsigned char*>(&d), sizeof d);
  mix(reinterpret_cast<const unsigned char*>(image.data()), image.size() * sizeof(float));
  return h;
}

void PoseOracle::add(const Tensor<float>& image, const PoseParams& params) {
  table_.emplace(image_hash(image), std::make_pair(image, params));
}

std::optional<PoseParams> PoseOracle::lookup(const Tensor<float>& image) const {
  auto [lo, hi] = table_.equal_range(image_hash(image));
  for (auto it = lo; it != hi; ++it) {
    if (it->second.first == image) return it->second.second;
  }
  return std::nullopt;
}

}  // namespace facereenact
