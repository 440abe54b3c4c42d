#pragma once

// Evaluation metrics, the self/cross evaluation protocols and the large-pose
// pair benchmark. The Frechet score runs on the pluggable appearance encoder
// and is not comparable to published FID numbers.

#include <array>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "facereenact/dataset.hpp"
#include "facereenact/encoders.hpp"

namespace facereenact {

enum class Metric { Csim, Lpips, Apd, Aed, Gaze };
inline constexpr std::array<Metric, 5> kAllMetrics = {Metric::Csim, Metric::Lpips, Metric::Apd, Metric::Aed,
                                                      Metric::Gaze};
const char* metric_name(Metric m);
Metric parse_metric(const std::string& name);

/// Cosine similarity of identity embeddings, in [-1, 1].
double csim(const Tensor<float>& a, const Tensor<float>& b, const EncoderSuite<float>& suite);

/// Mean absolute Euler-angle difference in degrees, wrapped at +-180.
double apd(const PoseParams& p, const PoseParams& q);

/// Mean absolute difference of expression coefficients.
double aed(const PoseParams& p, const PoseParams& q);

/// Euclidean distance between gaze directions.
double gaze_error(const PoseParams& p, const PoseParams& q);
double gaze_error(const Tensor<float>& a, const Tensor<float>& b, const EncoderSuite<float>& suite);

/// Frechet distance between Gaussian fits (unbiased covariance) of two
/// feature sets, one row per sample. Needs at least 2 rows each.
double frechet_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);

/// Frechet distance of spatially pooled extractor features.
double frechet_score(const std::vector<Tensor<float>>& set_a, const std::vector<Tensor<float>>& set_b,
                     const ImageEncoder<float>& extractor);

struct FrameRef {
  std::size_t identity = 0, frame = 0;
  friend auto operator<=>(const FrameRef&, const FrameRef&) = default;
};

struct BenchmarkPair {
  FrameRef source, target;
  double pose_distance = 0;  // degrees
};

struct PairBenchmark {
  double threshold_deg = 15;
  std::size_t per_video = 5;
  std::vector<BenchmarkPair> pairs;
};

/// Per identity, the per_video frame pairs with the largest apd strictly above
/// the threshold (ties broken by frame indices). Every frame needs a pose.
PairBenchmark build_large_pose_benchmark(const FrameDataset& dataset, double threshold_deg = 15,
                                         std::size_t per_video = 5);

void write_benchmark(std::ostream& out, const FrameDataset& dataset, const PairBenchmark& bench);
/// Reads pairs written by write_benchmark, resolving ids against the dataset.
PairBenchmark read_benchmark(std::istream& in, const FrameDataset& dataset);

struct EvalRecord {
  std::string video;
  std::size_t frame = 0;
  Metric metric = Metric::Csim;
  double value = 0;
};

struct EvalResult {
  std::vector<EvalRecord> records;  // sorted by (video, frame, metric)
  std::vector<std::string> warnings;
};

using ReenactFn = std::function<Tensor<float>(const Tensor<float>& source, const Tensor<float>& target)>;

/// Source is frame 0 of each identity; every other frame is a target.
/// All metrics are measured against the target.
EvalResult evaluate_self(const ReenactFn& reenact, const FrameDataset& dataset, const EncoderSuite<float>& suite);

/// CSIM against the source; APD and AED against the target. Records use the
/// pair index as the frame and "<source id>-><target id>" as the video.
EvalResult evaluate_cross(const ReenactFn& reenact, const FrameDataset& dataset,
                          const std::vector<std::pair<FrameRef, FrameRef>>& pairs,
                          const EncoderSuite<float>& suite);

void write_records(std::ostream& out, const std::vector<EvalRecord>& records);

struct MetricSummary {
  Metric metric;
  double mean = 0;
  std::size_t count = 0;
};
std::vector<MetricSummary> summarize(const std::vector<EvalRecord>& records);
void write_summary(std::ostream& out, const std::vector<MetricSummary>& summary);

}  // namespace facereenact
