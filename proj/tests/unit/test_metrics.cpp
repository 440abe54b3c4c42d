#include <cmath>
#include <sstream>

#include "doctest.h"
#include "grad_check.hpp"
#include "facereenact/arch.hpp"
#include "facereenact/metrics.hpp"

using namespace facereenact;
using facereenact::testing::rel_err;

namespace {

EncoderSuite<float> make_suite(std::size_t e = kDefaultExpressionDim) {
  EncoderSuiteConfig c;
  c.resolution = 32;
  c.expression_dim = e;
  return EncoderSuite<float>(c, scaled_arch(32, 64).num_styles());
}

PoseParams pose(double yaw, double pitch, double roll, std::size_t e = 0) {
  PoseParams p;
  p.euler = {yaw, pitch, roll};
  p.expression.assign(e, 0.0);
  return p;
}

// Rows of the order-8 Sylvester Hadamard matrix without the all-ones column:
// each column sums to zero and distinct columns are orthogonal.
double hadamard8(std::size_t row, std::size_t col) { return (__builtin_popcount(row & col) % 2) ? -1.0 : 1.0; }

// Eight samples whose unbiased mean is mu and unbiased covariance is diag(sigma^2).
std::vector<std::vector<double>> design(const std::vector<double>& mu, const std::vector<double>& sigma) {
  const double unit = std::sqrt(7.0 / 8.0);
  std::vector<std::vector<double>> rows(8, std::vector<double>(mu.size()));
  for (std::size_t n = 0; n < 8; ++n) {
    for (std::size_t k = 0; k < mu.size(); ++k) rows[n][k] = mu[k] + sigma[k] * unit * hadamard8(n, k + 1);
  }
  return rows;
}

FrameDataset pose_only_dataset(const std::vector<std::vector<std::array<double, 3>>>& videos) {
  FrameDataset ds;
  ds.resolution = 8;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    Identity id;
    id.id = "v" + std::to_string(v);
    for (std::size_t f = 0; f < videos[v].size(); ++f) {
      Frame fr;
      fr.name = "f" + std::to_string(f);
      fr.image = Tensor<float>({3, 8, 8});
      fr.pose = pose(videos[v][f][0], videos[v][f][1], videos[v][f][2]);
      id.frames.push_back(std::move(fr));
    }
    ds.identities.push_back(std::move(id));
  }
  return ds;
}

}  // namespace

TEST_CASE("pose distances") {
  CHECK(apd(pose(10, 5, 0), pose(10, 5, 0)) == 0.0);
  CHECK(apd(pose(10, 5, 0), pose(25, 20, 15)) == doctest::Approx(15.0).epsilon(1e-12));
  CHECK(apd(pose(179, 0, 0), pose(-179, 0, 0)) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const PoseParams a = pose(rng.uniform(-400, 400), rng.uniform(-400, 400), rng.uniform(-400, 400));
    const PoseParams b = pose(rng.uniform(-400, 400), rng.uniform(-400, 400), rng.uniform(-400, 400));
    CHECK(apd(a, b) <= 180.0);
    CHECK(apd(a, b) >= 0.0);
    CHECK(apd(a, b) == apd(b, a));
  }
}

TEST_CASE("expression and gaze distances") {
  PoseParams a = pose(0, 0, 0, 50), b = a;
  CHECK(aed(a, b) == 0.0);
  for (double& x : b.expression) x += 0.2;
  CHECK(aed(a, b) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(aed(a, b) == aed(b, a));
  CHECK_THROWS_AS(aed(a, pose(0, 0, 0, 4)), ShapeError);

  PoseParams g0 = pose(0, 0, 0), g1 = g0;
  g1.gaze = {0.3, 0.4};
  CHECK(gaze_error(g0, g0) == 0.0);
  CHECK(gaze_error(g0, g1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(gaze_error(g1, g0) == gaze_error(g0, g1));
}

TEST_CASE("image metrics on identical and distinct faces") {
  const auto suite = make_suite();
  const FrameDataset ds = generate_synthetic_dataset(2, 2, 32, 4);
  const Tensor<float>& x = ds.frame(0, 0).image;
  const Tensor<float>& y = ds.frame(1, 0).image;
  CHECK(csim(x, x, suite) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(csim(x, y, suite) < 1.0 - 1e-4);
  CHECK(csim(x, y, suite) >= -1.0);
  CHECK(csim(x, y, suite) == doctest::Approx(csim(y, x, suite)).epsilon(1e-9));
  CHECK(gaze_error(x, x, suite) == 0.0);
  CHECK(gaze_error(x, y, suite) >= 0.0);
}

TEST_CASE("frechet distance matches the closed form") {
  SUBCASE("unit covariances with a mean offset give the squared offset") {
    for (double d : {0.5, 1.0, 3.0}) {
      const auto a = design({0, 0, 0}, {1, 1, 1});
      const auto b = design({d, 0, 0}, {1, 1, 1});
      CHECK(rel_err(frechet_distance(a, b), d * d) < 1e-4);
    }
  }
  SUBCASE("diagonal covariances") {
    const std::vector<double> mu_a = {0.5, -1.0, 2.0, 0.0}, mu_b = {1.5, 0.0, 1.0, 0.25};
    const std::vector<double> s_a = {1.0, 2.0, 0.5, 1.5}, s_b = {2.0, 0.5, 0.5, 1.0};
    double expected = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      expected += (mu_a[k] - mu_b[k]) * (mu_a[k] - mu_b[k]) + (s_a[k] - s_b[k]) * (s_a[k] - s_b[k]);
    }
    const auto a = design(mu_a, s_a), b = design(mu_b, s_b);
    CHECK(rel_err(frechet_distance(a, b), expected) < 1e-4);
    CHECK(frechet_distance(a, b) == doctest::Approx(frechet_distance(b, a)).epsilon(1e-10));
  }
  CHECK_THROWS_AS(frechet_distance({{1.0}}, {{1.0}, {2.0}}), ShapeError);
}

TEST_CASE("frechet score of a set against itself is zero") {
  const auto suite = make_suite();
  const FrameDataset ds = generate_synthetic_dataset(3, 3, 32, 8);
  std::vector<Tensor<float>> s, t;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) (i < 2 ? s : t).push_back(ds.frame(i, j).image);
  }
  CHECK(std::abs(frechet_score(s, s, suite.appearance())) < 1e-6);
  CHECK(frechet_score(s, t, suite.appearance()) > 0);
  CHECK(frechet_score(s, t, suite.appearance()) ==
        doctest::Approx(frechet_score(t, s, suite.appearance())).epsilon(1e-6));
  CHECK_THROWS_AS(frechet_score({s[0]}, t, suite.appearance()), ShapeError);
}

TEST_CASE("large-pose benchmark selection") {
  // v0: max pairwise apd 10. v1: a single pair at exactly 15. v2: 7 frames
  // spread in yaw, 21 qualifying pairs. v3: a single pair at 16.
  std::vector<std::array<double, 3>> spread;
  for (int f = 0; f < 7; ++f) spread.push_back({f * 48.0 - 144.0 + 0.5 * f, 0, 0});
  const FrameDataset ds =
      pose_only_dataset({{{0, 0, 0}, {30, 0, 0}}, {{0, 0, 0}, {45, 0, 0}}, spread, {{0, 0, 0}, {0, 48, 0}}});
  const PairBenchmark b = build_large_pose_benchmark(ds, 15, 5);
  std::size_t per[4] = {0, 0, 0, 0};
  for (const BenchmarkPair& p : b.pairs) {
    CHECK(p.pose_distance > 15.0);
    CHECK(p.source.identity == p.target.identity);
    ++per[p.source.identity];
  }
  CHECK(per[0] == 0);
  CHECK(per[1] == 0);
  CHECK(per[2] == 5);
  CHECK(per[3] == 1);
  for (std::size_t i = 1; i < b.pairs.size(); ++i) {
    if (b.pairs[i].source.identity == b.pairs[i - 1].source.identity) {
      CHECK(b.pairs[i].pose_distance <= b.pairs[i - 1].pose_distance);
    }
  }
  const PairBenchmark again = build_large_pose_benchmark(ds, 15, 5);
  REQUIRE(again.pairs.size() == b.pairs.size());
  for (std::size_t i = 0; i < b.pairs.size(); ++i) {
    CHECK(again.pairs[i].source == b.pairs[i].source);
    CHECK(again.pairs[i].target == b.pairs[i].target);
  }

  std::stringstream ss;
  write_benchmark(ss, ds, b);
  const PairBenchmark read = read_benchmark(ss, ds);
  REQUIRE(read.pairs.size() == b.pairs.size());
  CHECK(read.pairs[0].target == b.pairs[0].target);

  FrameDataset missing = ds;
  missing.identities[0].frames[0].pose.reset();
  CHECK_THROWS_AS(build_large_pose_benchmark(missing), DatasetError);
}

TEST_CASE("benchmark ties break on frame index") {
  const FrameDataset ds = pose_only_dataset({{{0, 0, 0}, {60, 0, 0}, {0, 0, 0}, {60, 0, 0}}});
  const PairBenchmark b = build_large_pose_benchmark(ds, 15, 2);
  REQUIRE(b.pairs.size() == 2);
  CHECK(b.pairs[0].source.frame == 0);
  CHECK(b.pairs[0].target.frame == 1);
  CHECK(b.pairs[1].source.frame == 0);
  CHECK(b.pairs[1].target.frame == 3);
}

TEST_CASE("self evaluation protocol") {
  auto suite = make_suite();
  const FrameDataset ds = generate_synthetic_dataset(2, 4, 32, 6);
  ds.register_poses(suite.oracle());
  const ReenactFn perfect = [](const Tensor<float>&, const Tensor<float>& target) { return target; };
  const EvalResult r = evaluate_self(perfect, ds, suite);
  CHECK(r.records.size() == 2 * 3 * kAllMetrics.size());
  CHECK(r.warnings.empty());
  for (const EvalRecord& rec : r.records) {
    CHECK(rec.frame >= 1);
    if (rec.metric == Metric::Csim) CHECK(rec.value == doctest::Approx(1.0).epsilon(1e-6));
    if (rec.metric == Metric::Apd || rec.metric == Metric::Aed || rec.metric == Metric::Gaze) CHECK(rec.value == 0.0);
    if (rec.metric == Metric::Lpips) CHECK(rec.value == doctest::Approx(0.0));
  }
  for (std::size_t i = 1; i < r.records.size(); ++i) {
    const auto& a = r.records[i - 1];
    const auto& b = r.records[i];
    CHECK(std::tie(a.video, a.frame, a.metric) < std::tie(b.video, b.frame, b.metric));
  }

  const ReenactFn copy_source = [](const Tensor<float>& source, const Tensor<float>&) { return source; };
  const auto summary = summarize(evaluate_self(copy_source, ds, suite).records);
  REQUIRE(summary.size() == kAllMetrics.size());
  for (const auto& s : summary) {
    CHECK(s.count == 6);
    if (s.metric == Metric::Apd) CHECK(s.mean > 0.0);
  }

  std::ostringstream out;
  write_records(out, r.records);
  CHECK(out.str().rfind("video\tframe\tmetric\tvalue\n", 0) == 0);
}

TEST_CASE("cross evaluation protocol") {
  auto suite = make_suite();
  const FrameDataset ds = generate_synthetic_dataset(3, 2, 32, 6);
  ds.register_poses(suite.oracle());
  const ReenactFn copy_source = [](const Tensor<float>& source, const Tensor<float>&) { return source; };
  const std::vector<std::pair<FrameRef, FrameRef>> pairs = {{{0, 0}, {1, 1}}, {{1, 0}, {2, 0}}, {{2, 0}, {5, 0}}};
  const EvalResult r = evaluate_cross(copy_source, ds, pairs, suite);
  CHECK(r.records.size() == 2 * 3);
  CHECK(r.warnings.size() == 1);
  for (const EvalRecord& rec : r.records) {
    CHECK(rec.metric != Metric::Lpips);
    CHECK(rec.metric != Metric::Gaze);
    if (rec.metric == Metric::Csim) CHECK(rec.value == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(r.records[0].video == "id_000->id_001");
}
