#include "doctest.h"
#include "grad_check.hpp"
#include "facereenact/losses.hpp"

using namespace facereenact;
using namespace facereenact::testing;

namespace {

PoseParams neutral_pose(std::size_t e) {
  PoseParams p;
  p.euler = {8, -6, 4};
  p.expression.assign(e, 0.0);
  p.shape3d = {0.4, 0.52};
  p.gaze = {0.1, -0.15};
  return p;
}

template <class T>
Tensor<T> face(std::uint64_t seed, const PoseParams& p, std::size_t res = 32) {
  Rng rng(seed);
  const FaceIdentity id = FaceIdentity::sample(rng);
  return render_face(id, p, ExpressionBasis(p.expression.size()), res).template cast<T>();
}

template <class T>
Tensor<T> jitter(const Tensor<T>& x, std::uint64_t seed, double amp) {
  Rng rng(seed);
  Tensor<T> y = x;
  for (auto& v : y.values()) v += static_cast<T>(amp * rng.normal());
  return y;
}

}  // namespace

TEST_CASE("pixel loss arithmetic") {
  const Tensor<float> a({3, 4, 4}, 0.5f), b({3, 4, 4}, 0.25f);
  CHECK(l_pix(a, a) == 0.0);
  CHECK(l_pix(a, b) == doctest::Approx(0.25));
  Rng rng(1);
  const Tensor<double> x = random_tensor({3, 5, 5}, rng), y = random_tensor({3, 5, 5}, rng);
  CHECK(l_pix(x, y) == l_pix(y, x));
  CHECK_THROWS_AS(l_pix(a, Tensor<float>({3, 4, 5})), ShapeError);
}

TEST_CASE("weighted objectives per task") {
  const std::array<double, kNumLossTerms> ones = {1, 1, 1, 1, 1};
  const LossOptions opts;
  CHECK(combine_terms(Task::Self, ones, opts).total == doctest::Approx(27.5));
  CHECK(combine_terms(Task::Inversion, ones, opts).total == doctest::Approx(27.0));
  CHECK(combine_terms(Task::Cross, ones, opts).total == doctest::Approx(10.5));
  LossOptions with_gaze;
  with_gaze.cross_gaze = true;
  CHECK(combine_terms(Task::Cross, ones, with_gaze).total == doctest::Approx(12.5));

  // Linear in the weights for fixed raw terms.
  const std::array<double, kNumLossTerms> raw = {0.3, 0.7, 0.2, 1.5, 0.4};
  LossOptions w1, w2, sum;
  w2.weights = {1, 2, 3, 4, 5};
  sum.weights = {w1.weights.lambda_pix + 1, w1.weights.lambda_lpips + 2, w1.weights.lambda_id + 3,
                 w1.weights.lambda_sh + 4, w1.weights.lambda_g + 5};
  CHECK(combine_terms(Task::Self, raw, sum).total ==
        doctest::Approx(combine_terms(Task::Self, raw, w1).total + combine_terms(Task::Self, raw, w2).total));

  LossOptions bad;
  bad.weights.lambda_id = -1;
  CHECK_THROWS_AS(bad.weights.validate(), ConfigError);
  CHECK(parse_task("cross") == Task::Cross);
  CHECK_THROWS_AS(parse_task("phase4"), ConfigError);
}

TEST_CASE("cosine endpoints") {
  const Tensor<double> e1({3}, std::vector<double>{1, 0, 0});
  const Tensor<double> e2({3}, std::vector<double>{0, 2, 0});
  const Tensor<double> e3({3}, std::vector<double>{-3, 0, 0});
  CHECK(1 - embedding_cosine(e1, e1) == doctest::Approx(0.0));
  CHECK(1 - embedding_cosine(e1, e2) == doctest::Approx(1.0));
  CHECK(1 - embedding_cosine(e1, e3) == doctest::Approx(2.0));
}

TEST_CASE("image losses vanish on identical inputs and stay nonnegative") {
  EncoderSuite<float> suite({}, 8);
  const PoseParams p = neutral_pose(50);
  const Tensor<float> x = face<float>(3, p);
  const Tensor<float> y = jitter(face<float>(4, p), 5, 0.05);
  CHECK(l_lpips(x, x, suite.appearance()) == 0.0);
  CHECK(l_id(x, x, suite) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(l_shape(x, x, suite) == 0.0);
  CHECK(l_gaze(x, x, suite) == 0.0);
  CHECK(l_lpips(x, y, suite.appearance()) > 0);
  const double id = l_id(x, y, suite);
  CHECK((id >= 0 && id <= 2));
  CHECK(l_shape(x, y, suite) == doctest::Approx(l_shape(y, x, suite)));
  CHECK(l_gaze(x, y, suite) == doctest::Approx(l_gaze(y, x, suite)));
}

TEST_CASE("gaze distance on oracle frames") {
  EncoderSuite<float> suite({}, 8);
  PoseParams a = neutral_pose(50), b = a;
  a.gaze = {0, 0};
  b.gaze = {0.3, 0.4};
  const Tensor<float> ia = face<float>(6, a), ib = face<float>(6, b);
  suite.oracle().add(ia, a);
  suite.oracle().add(ib, b);
  CHECK(l_gaze(ia, ib, suite) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("shape loss for a uniform expression shift") {
  const std::size_t e = 50;
  const ExpressionBasis basis(e);
  PoseParams a = neutral_pose(e), b = a;
  for (auto& v : b.expression) v += 0.2;
  const auto da = shape_descriptor(a, basis), db = shape_descriptor(b, basis);
  REQUIRE(da.size() == 3 + e + 16);
  double expr = 0, lm = 0;
  for (std::size_t i = 3; i < 3 + e; ++i) expr += std::abs(db[i] - da[i]);
  for (std::size_t i = 3 + e; i < da.size(); ++i) lm += std::abs(db[i] - da[i]);
  CHECK(expr / e == doctest::Approx(0.2).epsilon(1e-12));
  for (std::size_t i = 0; i < 3; ++i) CHECK(db[i] == da[i]);
  CHECK(l_shape(a, b, basis) == doctest::Approx((0.2 * e + lm) / da.size()).epsilon(1e-12));

  // The image path reads the same parameters back from the oracle.
  EncoderSuite<float> suite({}, 8);
  const Tensor<float> ia = face<float>(7, a), ib = face<float>(7, b);
  suite.oracle().add(ia, a);
  suite.oracle().add(ib, b);
  CHECK(l_shape(ia, ib, suite) == doctest::Approx(l_shape(a, b, basis)).epsilon(1e-12));
}

TEST_CASE("perceptual proxy grows with noise amplitude") {
  EncoderSuite<float> suite({}, 8);
  const Tensor<float> x = face<float>(8, neutral_pose(50));
  int ordered = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Tensor<float> lo = jitter(x, seed, 0.02), hi = jitter(x, seed, 0.04);
    ordered += l_lpips(x, lo, suite.appearance()) <= l_lpips(x, hi, suite.appearance());
  }
  CHECK(ordered >= 95);
}

TEST_CASE("cross samples ignore everything but identity and shape") {
  EncoderSuite<double> suite({}, 8);
  const PoseParams p = neutral_pose(50);
  const Tensor<double> src = face<double>(9, p);
  Tensor<double> tgt = jitter(face<double>(10, p), 11, 0.02);
  const Tensor<double> gen = jitter(face<double>(9, p), 12, 0.05);

  // Cross with source == generated and matching target pose gives zero.
  PoseParams q = p;
  const Tensor<double> same_pose_tgt = face<double>(13, q);
  suite.oracle().add(same_pose_tgt.cast<float>(), q);
  suite.oracle().add(src.cast<float>(), p);
  LossSample<double> zero{&src, &same_pose_tgt, &src, Task::Cross};
  CHECK(phase_objective(zero, suite, {}).total == doctest::Approx(0.0).epsilon(1e-9));

  // The red channel reaches only the pixel and perceptual terms through the target.
  auto total = [&](Task task) {
    LossSample<double> s{&src, &tgt, &gen, task};
    return phase_objective(s, suite, {}).total;
  };
  const double cross0 = total(Task::Cross), self0 = total(Task::Self);
  tgt.at(0, 10, 12) += 0.3;
  CHECK(total(Task::Cross) == cross0);
  CHECK(total(Task::Self) != self0);

  Tensor<double> d_gen;
  LossSample<double> s{&src, &tgt, &gen, Task::Cross};
  const LossReport r = phase_objective(s, suite, {}, &d_gen);
  CHECK(!r.included[0]);
  CHECK(!r.included[1]);
  CHECK(r.raw[0] == 0.0);
  // Gradient equals the identity plus shape parts alone.
  Tensor<double> g_id, g_sh;
  l_id(src, gen, suite, &g_id);
  l_shape(tgt, gen, suite, &g_sh);
  double worst = 0;
  for (std::size_t i = 0; i < d_gen.size(); ++i) {
    worst = std::max(worst, std::abs(d_gen[i] - (10.0 * g_id[i] + 0.5 * g_sh[i])));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("objective gradients match central differences") {
  EncoderSuite<double> suite({}, 8);
  const PoseParams p = neutral_pose(50);
  PoseParams moved = p;
  moved.euler = {-12, 5, -6};
  moved.gaze = {-0.2, 0.2};
  const Tensor<double> src = face<double>(14, p);
  const Tensor<double> tgt = face<double>(15, moved);
  suite.oracle().add(tgt.cast<float>(), moved);
  Rng rng(16);
  for (Task task : {Task::Inversion, Task::Self, Task::Cross}) {
    CAPTURE(std::string(task_name(task)));
    Tensor<double> gen = jitter(face<double>(14, p), 17, 0.03);
    LossSample<double> s{&src, &tgt, &gen, task};
    Tensor<double> d_gen;
    phase_objective(s, suite, {}, &d_gen);
    auto f = [&] { return phase_objective(s, suite, {}).total; };
    for (int k = 0; k < 25; ++k) {
      const std::size_t i = rng.uniform_index(gen.size());
      const double fd = central_difference(gen.values(), i, f, 1e-5);
      CAPTURE(i);
      CAPTURE(d_gen[i]);
      CHECK(rel_err(d_gen[i], fd) < 1e-3);
    }
  }
}
