#include "facereenact/losses.hpp"

#include <cmath>
#include <optional>

#include "facereenact/kernels.hpp"

namespace facereenact {

void LossWeights::validate() const {
  for (double w : {lambda_pix, lambda_lpips, lambda_id, lambda_sh, lambda_g}) {
    if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and nonnegative");
  }
}

const char* loss_term_name(LossTerm t) {
  switch (t) {
    case LossTerm::Pix: return "pix";
    case LossTerm::Lpips: return "lpips";
    case LossTerm::Id: return "id";
    case LossTerm::Shape: return "shape";
    case LossTerm::Gaze: return "gaze";
  }
  return "?";
}

const char* task_name(Task t) {
  switch (t) {
    case Task::Inversion: return "inversion";
    case Task::Self: return "self";
    case Task::Cross: return "cross";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  for (Task t : {Task::Inversion, Task::Self, Task::Cross}) {
    if (name == task_name(t)) return t;
  }
  throw ConfigError("unknown task '" + name + "'");
}

bool LossReport::all_finite() const {
  for (std::size_t i = 0; i < kNumLossTerms; ++i) {
    if (!std::isfinite(raw[i]) || !std::isfinite(weighted[i])) return false;
  }
  return std::isfinite(total);
}

std::array<bool, kNumLossTerms> task_terms(Task task, const LossOptions& options) {
  switch (task) {
    case Task::Inversion: return {true, true, true, false, true};
    case Task::Self: return {true, true, true, true, true};
    case Task::Cross: return {false, false, true, true, options.cross_gaze};
  }
  throw ConfigError("unknown task tag");
}

LossReport combine_terms(Task task, const std::array<double, kNumLossTerms>& raw,
                         const LossOptions& options) {
  const LossWeights& w = options.weights;
  const std::array<double, kNumLossTerms> lambda = {w.lambda_pix, w.lambda_lpips, w.lambda_id,
                                                    w.lambda_sh, w.lambda_g};
  LossReport r;
  r.included = task_terms(task, options);
  for (std::size_t i = 0; i < kNumLossTerms; ++i) {
    if (!r.included[i]) continue;
    r.raw[i] = raw[i];
    r.weighted[i] = lambda[i] * raw[i];
    r.total += r.weighted[i];
  }
  return r;
}

template <class T>
double l_pix(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>* d_b) {
  require_shape(b.shape(), a.shape(), "l_pix");
  const double n = static_cast<double>(a.size());
  double s = 0;
  if (d_b) *d_b = Tensor<T>(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(b[i]) - static_cast<double>(a[i]);
    s += std::abs(d);
    if (d_b) (*d_b)[i] = static_cast<T>((d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / n);
  }
  return s / n;
}

namespace {

constexpr double kUnitEps = 1e-10;

// Channel-unit-normalized squared distance of one level, averaged over positions.
// Adds d/d(level_b) into d_level when given.
template <class T>
double level_distance(const Tensor<T>& fa, const Tensor<T>& fb, double scale, Tensor<T>* d_level) {
  const std::size_t c = fa.dim(0), hw = fa.dim(1) * fa.dim(2);
  std::vector<double> ua(c), ub(c);
  double total = 0;
  for (std::size_t p = 0; p < hw; ++p) {
    double ra = 0, rb = 0;
    for (std::size_t k = 0; k < c; ++k) {
      ra += static_cast<double>(fa[k * hw + p]) * fa[k * hw + p];
      rb += static_cast<double>(fb[k * hw + p]) * fb[k * hw + p];
    }
    ra = std::sqrt(ra);
    rb = std::sqrt(rb);
    double dist = 0, dot_fg = 0;
    for (std::size_t k = 0; k < c; ++k) {
      ua[k] = fa[k * hw + p] / (ra + kUnitEps);
      ub[k] = fb[k * hw + p] / (rb + kUnitEps);
      dist += (ua[k] - ub[k]) * (ua[k] - ub[k]);
    }
    total += dist;
    if (!d_level) continue;
    // g = dL/du_b; chain through u = f / (|f| + eps).
    for (std::size_t k = 0; k < c; ++k) dot_fg += fb[k * hw + p] * (-2.0 * (ua[k] - ub[k]) * scale);
    for (std::size_t k = 0; k < c; ++k) {
      const double g = -2.0 * (ua[k] - ub[k]) * scale;
      double v = g / (rb + kUnitEps);
      if (rb > 0) v -= fb[k * hw + p] * dot_fg / (rb * (rb + kUnitEps) * (rb + kUnitEps));
      (*d_level)[k * hw + p] += static_cast<T>(v);
    }
  }
  return total * scale;
}

struct PoseRead {
  PoseParams params;
  std::optional<PoseEstimate> estimate;  // set when the estimator ran
};

template <class T>
PoseRead read_pose(const EncoderSuite<T>& suite, const Tensor<T>& image) {
  require_image(image, suite.config().resolution, "pose input");
  if (auto hit = suite.oracle().lookup(image)) return {*hit, std::nullopt};
  PoseEstimate est = estimate_pose(image, suite.expression_basis());
  PoseParams p = est.params;
  return {std::move(p), std::move(est)};
}

// Lookup results are piecewise constant, so only estimated poses pass gradient.
template <class T>
Tensor<T> pose_backward(const EncoderSuite<T>& suite, const Tensor<T>& image, const PoseRead& read,
                        const PoseParams& d_params) {
  if (!read.estimate) return Tensor<T>(image.shape());
  return estimate_pose_backward(image, *read.estimate, suite.expression_basis(), d_params);
}

PoseParams zero_pose_gradient(const PoseParams& like) {
  PoseParams g;
  g.expression.assign(like.expression.size(), 0.0);
  g.shape3d.assign(like.shape3d.size(), 0.0);
  return g;
}

}  // namespace

template <class T>
double l_lpips(const Tensor<T>& a, const Tensor<T>& b, const ImageEncoder<T>& extractor, Tensor<T>* d_b) {
  require_shape(b.shape(), a.shape(), "l_lpips");
  EncoderTape<T> ta, tb;
  extractor.encode(a, &ta);
  extractor.encode(b, &tb);
  const std::size_t levels = ta.levels.size();
  if (levels == 0) throw ShapeError("perceptual extractor exposes no feature levels");
  std::vector<Tensor<T>> d_levels;
  double total = 0;
  for (std::size_t l = 0; l < levels; ++l) {
    const Tensor<T>& fa = ta.levels[l];
    const double scale = 1.0 / (static_cast<double>(levels) * fa.dim(1) * fa.dim(2));
    if (d_b) d_levels.emplace_back(fa.shape());
    total += level_distance(fa, tb.levels[l], scale, d_b ? &d_levels.back() : nullptr);
  }
  if (d_b) *d_b = extractor.backward(tb, nullptr, &d_levels);
  return total;
}

template <class T>
double embedding_cosine(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(b.shape(), a.shape(), "embedding_cosine");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (!(aa > 0 && bb > 0)) throw std::invalid_argument("embedding_cosine: zero-norm embedding");
  return ab / std::sqrt(aa * bb);
}

template <class T>
double l_id(const Tensor<T>& a, const Tensor<T>& b, const EncoderSuite<T>& suite, Tensor<T>* d_b) {
  const Tensor<T> ea = suite.identity_embedding(a);
  EncoderTape<T> tape;
  const FeatureMap<T> fb = suite.encode_appearance(b, &tape);
  const Tensor<T> eb = suite.identity().embed(fb);
  const double cos = embedding_cosine(ea, eb);
  if (d_b) {
    Tensor<T> d_eb(ea.shape());
    for (std::size_t i = 0; i < ea.size(); ++i) d_eb[i] = -ea[i];
    const Tensor<T> d_f = suite.identity().backward(fb, eb, d_eb);
    *d_b = suite.appearance().backward(tape, &d_f, nullptr);
  }
  return 1.0 - cos;
}

double l_shape(const PoseParams& a, const PoseParams& b, const ExpressionBasis& basis) {
  const auto da = shape_descriptor(a, basis);
  const auto db = shape_descriptor(b, basis);
  double s = 0;
  for (std::size_t i = 0; i < da.size(); ++i) s += std::abs(da[i] - db[i]);
  return s / static_cast<double>(da.size());
}

template <class T>
double l_shape(const Tensor<T>& a, const Tensor<T>& b, const EncoderSuite<T>& suite, Tensor<T>* d_b) {
  const ExpressionBasis& basis = suite.expression_basis();
  const PoseRead ra = read_pose(suite, a);
  const PoseRead rb = read_pose(suite, b);
  const auto da = shape_descriptor(ra.params, basis);
  const auto db = shape_descriptor(rb.params, basis);
  const double n = static_cast<double>(da.size());
  double s = 0;
  std::vector<double> g(da.size());
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = db[i] - da[i];
    s += std::abs(d);
    g[i] = (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / n;
  }
  if (d_b) *d_b = pose_backward(suite, b, rb, shape_descriptor_backward(rb.params, basis, g));
  return s / n;
}

template <class T>
double l_gaze(const Tensor<T>& a, const Tensor<T>& b, const EncoderSuite<T>& suite, Tensor<T>* d_b) {
  const PoseRead ra = read_pose(suite, a);
  const PoseRead rb = read_pose(suite, b);
  const double dx = rb.params.gaze[0] - ra.params.gaze[0];
  const double dy = rb.params.gaze[1] - ra.params.gaze[1];
  const double dist = std::hypot(dx, dy);
  if (d_b) {
    PoseParams g = zero_pose_gradient(rb.params);
    if (dist > 0) g.gaze = {dx / dist, dy / dist};
    *d_b = pose_backward(suite, b, rb, g);
  }
  return dist;
}

template <class T>
LossReport phase_objective(const LossSample<T>& sample, const EncoderSuite<T>& suite,
                           const LossOptions& options, Tensor<T>* d_generated) {
  if (!sample.generated || !sample.target || (sample.task == Task::Cross && !sample.source)) {
    throw ShapeError("loss sample is missing an image");
  }
  options.weights.validate();
  const auto active = task_terms(sample.task, options);
  const Tensor<T>& gen = *sample.generated;
  const Tensor<T>& tgt = *sample.target;
  // Identity compares against the source for cross pairs, against the target otherwise.
  const Tensor<T>& id_ref = sample.task == Task::Cross ? *sample.source : tgt;
  const LossWeights& w = options.weights;
  const std::array<double, kNumLossTerms> lambda = {w.lambda_pix, w.lambda_lpips, w.lambda_id,
                                                    w.lambda_sh, w.lambda_g};

  std::array<double, kNumLossTerms> raw{};
  if (d_generated) *d_generated = Tensor<T>(gen.shape());
  Tensor<T> g;
  Tensor<T>* gp = d_generated ? &g : nullptr;
  for (std::size_t i = 0; i < kNumLossTerms; ++i) {
    if (!active[i]) continue;
    switch (static_cast<LossTerm>(i)) {
      case LossTerm::Pix: raw[i] = l_pix(tgt, gen, gp); break;
      case LossTerm::Lpips: raw[i] = l_lpips(tgt, gen, suite.appearance(), gp); break;
      case LossTerm::Id: raw[i] = l_id(id_ref, gen, suite, gp); break;
      case LossTerm::Shape: raw[i] = l_shape(tgt, gen, suite, gp); break;
      case LossTerm::Gaze: raw[i] = l_gaze(tgt, gen, suite, gp); break;
    }
    if (d_generated && lambda[i] != 0) {
      kernels::axpy<T>(g.size(), static_cast<T>(lambda[i]), g.data(), d_generated->data());
    }
  }
  return combine_terms(sample.task, raw, options);
}

#define FACEREENACT_INSTANTIATE_LOSSES(T)                                                          \
  template double embedding_cosine<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template double l_pix<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                        \
  template double l_lpips<T>(const Tensor<T>&, const Tensor<T>&, const ImageEncoder<T>&, Tensor<T>*); \
  template double l_id<T>(const Tensor<T>&, const Tensor<T>&, const EncoderSuite<T>&, Tensor<T>*);  \
  template double l_shape<T>(const Tensor<T>&, const Tensor<T>&, const EncoderSuite<T>&, Tensor<T>*); \
  template double l_gaze<T>(const Tensor<T>&, const Tensor<T>&, const EncoderSuite<T>&, Tensor<T>*); \
  template LossReport phase_objective<T>(const LossSample<T>&, const EncoderSuite<T>&,             \
                                         const LossOptions&, Tensor<T>*);

FACEREENACT_INSTANTIATE_LOSSES(float)
FACEREENACT_INSTANTIATE_LOSSES(double)

}  // namespace facereenact
