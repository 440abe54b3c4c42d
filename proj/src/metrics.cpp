#include "facereenact/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include "facereenact/arch.hpp"
#include "facereenact/losses.hpp"

namespace facereenact {

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::Csim: return "csim";
    case Metric::Lpips: return "lpips";
    case Metric::Apd: return "apd";
    case Metric::Aed: return "aed";
    case Metric::Gaze: return "gaze";
  }
  return "?";
}

Metric parse_metric(const std::string& name) {
  for (Metric m : kAllMetrics) {
    if (name == metric_name(m)) return m;
  }
  throw ConfigError("unknown metric '" + name + "'");
}

double csim(const Tensor<float>& a, const Tensor<float>& b, const EncoderSuite<float>& suite) {
  return embedding_cosine(suite.identity_embedding(a), suite.identity_embedding(b));
}

double apd(const PoseParams& p, const PoseParams& q) {
  double sum = 0;
  for (std::size_t i = 0; i < 3; ++i) sum += std::abs(wrap_degrees(p.euler[i] - q.euler[i]));
  return sum / 3.0;
}

double aed(const PoseParams& p, const PoseParams& q) {
  if (p.expression.size() != q.expression.size()) {
    throw ShapeError("aed needs equal expression lengths, got " + std::to_string(p.expression.size()) + " and " +
                     std::to_string(q.expression.size()));
  }
  if (p.expression.empty()) return 0;
  double sum = 0;
  for (std::size_t i = 0; i < p.expression.size(); ++i) sum += std::abs(p.expression[i] - q.expression[i]);
  return sum / static_cast<double>(p.expression.size());
}

double gaze_error(const PoseParams& p, const PoseParams& q) {
  return std::hypot(p.gaze[0] - q.gaze[0], p.gaze[1] - q.gaze[1]);
}

double gaze_error(const Tensor<float>& a, const Tensor<float>& b, const EncoderSuite<float>& suite) {
  const auto ga = suite.estimate_gaze(a), gb = suite.estimate_gaze(b);
  return std::hypot(ga[0] - gb[0], ga[1] - gb[1]);
}

namespace {

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

Gaussian fit(const std::vector<std::vector<double>>& rows, const char* which) {
  if (rows.size() < 2) throw ShapeError(std::string("frechet distance needs at least 2 samples in ") + which);
  const std::size_t d = rows[0].size();
  Eigen::MatrixXd x(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d) throw ShapeError("frechet distance needs equal feature lengths");
    for (std::size_t k = 0; k < d; ++k) x(i, k) = rows[i][k];
  }
  Gaussian g;
  g.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - g.mean.transpose();
  g.cov = centered.transpose() * centered / static_cast<double>(rows.size() - 1);
  return g;
}

}  // namespace

double frechet_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  const Gaussian ga = fit(a, "the first set"), gb = fit(b, "the second set");
  if (ga.mean.size() != gb.mean.size()) throw ShapeError("frechet distance needs equal feature lengths");
  // Tr((S1 S2)^1/2) equals the sum of root eigenvalues of S1^1/2 S2 S1^1/2, which is symmetric.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e1(ga.cov);
  const Eigen::VectorXd root = e1.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sqrt1 = e1.eigenvectors() * root.asDiagonal() * e1.eigenvectors().transpose();
  const Eigen::MatrixXd inner = sqrt1 * gb.cov * sqrt1;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e2((inner + inner.transpose()) * 0.5, Eigen::EigenvaluesOnly);
  const double tr_sqrt = e2.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (ga.mean - gb.mean).squaredNorm() + ga.cov.trace() + gb.cov.trace() - 2.0 * tr_sqrt;
  return std::max(d, 0.0);
}

double frechet_score(const std::vector<Tensor<float>>& set_a, const std::vector<Tensor<float>>& set_b,
                     const ImageEncoder<float>& extractor) {
  auto pooled = [&](const std::vector<Tensor<float>>& images) {
    std::vector<std::vector<double>> rows;
    for (const auto& image : images) {
      const Tensor<float> f = extractor.encode(image).data;
      const std::size_t c = f.dim(0), hw = f.size() / c;
      std::vector<double> row(c, 0.0);
      for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t p = 0; p < hw; ++p) row[k] += f[k * hw + p];
        row[k] /= static_cast<double>(hw);
      }
      rows.push_back(std::move(row));
    }
    return rows;
  };
  return frechet_distance(pooled(set_a), pooled(set_b));
}

PairBenchmark build_large_pose_benchmark(const FrameDataset& dataset, double threshold_deg, std::size_t per_video) {
  PairBenchmark bench;
  bench.threshold_deg = threshold_deg;
  bench.per_video = per_video;
  for (std::size_t v = 0; v < dataset.identities.size(); ++v) {
    const Identity& id = dataset.identities[v];
    for (const Frame& f : id.frames) {
      if (!f.pose) throw DatasetError("large-pose benchmark needs poses; frame " + id.id + "/" + f.name + " has none");
    }
    std::vector<BenchmarkPair> candidates;
    for (std::size_t i = 0; i < id.frames.size(); ++i) {
      for (std::size_t j = i + 1; j < id.frames.size(); ++j) {
        const double d = apd(*id.frames[i].pose, *id.frames[j].pose);
        if (d > threshold_deg) candidates.push_back({{v, i}, {v, j}, d});
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(), [](const BenchmarkPair& a, const BenchmarkPair& b) {
      if (a.pose_distance != b.pose_distance) return a.pose_distance > b.pose_distance;
      return std::tie(a.source, a.target) < std::tie(b.source, b.target);
    });
    if (candidates.size() > per_video) candidates.resize(per_video);
    bench.pairs.insert(bench.pairs.end(), candidates.begin(), candidates.end());
  }
  return bench;
}

void write_benchmark(std::ostream& out, const FrameDataset& dataset, const PairBenchmark& bench) {
  out << "source_id\tsource_frame\ttarget_id\ttarget_frame\tapd\n";
  out.precision(17);
  for (const BenchmarkPair& p : bench.pairs) {
    out << dataset.identities.at(p.source.identity).id << '\t' << dataset.frame(p.source.identity, p.source.frame).name
        << '\t' << dataset.identities.at(p.target.identity).id << '\t'
        << dataset.frame(p.target.identity, p.target.frame).name << '\t' << p.pose_distance << '\n';
  }
}

namespace {

FrameRef resolve(const FrameDataset& dataset, const std::string& id, const std::string& frame) {
  for (std::size_t i = 0; i < dataset.identities.size(); ++i) {
    if (dataset.identities[i].id != id) continue;
    for (std::size_t j = 0; j < dataset.identities[i].frames.size(); ++j) {
      if (dataset.identities[i].frames[j].name == frame) return {i, j};
    }
  }
  throw DatasetError("pair list refers to missing frame " + id + "/" + frame);
}

}  // namespace

PairBenchmark read_benchmark(std::istream& in, const FrameDataset& dataset) {
  PairBenchmark bench;
  std::string line;
  if (!std::getline(in, line) || line.rfind("source_id\t", 0) != 0) {
    throw DatasetError("pair list must start with the source_id/source_frame/target_id/target_frame header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string sid, sf, tid, tf;
    double d = 0;
    if (!(row >> sid >> sf >> tid >> tf)) throw DatasetError("malformed pair list row: " + line);
    row >> d;
    bench.pairs.push_back({resolve(dataset, sid, sf), resolve(dataset, tid, tf), d});
  }
  return bench;
}

namespace {

void sort_records(std::vector<EvalRecord>& records) {
  std::sort(records.begin(), records.end(), [](const EvalRecord& a, const EvalRecord& b) {
    return std::tie(a.video, a.frame, a.metric) < std::tie(b.video, b.frame, b.metric);
  });
}

}  // namespace

EvalResult evaluate_self(const ReenactFn& reenact, const FrameDataset& dataset, const EncoderSuite<float>& suite) {
  EvalResult result;
  for (const Identity& id : dataset.identities) {
    if (id.frames.size() < 2) {
      result.warnings.push_back("identity '" + id.id + "' has no target frames; skipped");
      continue;
    }
    const Tensor<float>& source = id.frames[0].image;
    for (std::size_t j = 1; j < id.frames.size(); ++j) {
      const Tensor<float>& target = id.frames[j].image;
      const Tensor<float> out = reenact(source, target);
      const PoseParams pt = suite.extract_pose_params(target), po = suite.extract_pose_params(out);
      result.records.push_back({id.id, j, Metric::Csim, csim(target, out, suite)});
      result.records.push_back({id.id, j, Metric::Lpips, l_lpips(target, out, suite.appearance())});
      result.records.push_back({id.id, j, Metric::Apd, apd(pt, po)});
      result.records.push_back({id.id, j, Metric::Aed, aed(pt, po)});
      result.records.push_back({id.id, j, Metric::Gaze, gaze_error(pt, po)});
    }
  }
  sort_records(result.records);
  return result;
}

EvalResult evaluate_cross(const ReenactFn& reenact, const FrameDataset& dataset,
                          const std::vector<std::pair<FrameRef, FrameRef>>& pairs, const EncoderSuite<float>& suite) {
  EvalResult result;
  auto valid = [&](const FrameRef& r) {
    return r.identity < dataset.identities.size() && r.frame < dataset.identities[r.identity].frames.size();
  };
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& [s, t] = pairs[k];
    if (!valid(s) || !valid(t)) {
      result.warnings.push_back("pair " + std::to_string(k) + " refers to a missing frame; skipped");
      continue;
    }
    const Tensor<float>& source = dataset.frame(s.identity, s.frame).image;
    const Tensor<float>& target = dataset.frame(t.identity, t.frame).image;
    const Tensor<float> out = reenact(source, target);
    const PoseParams pt = suite.extract_pose_params(target), po = suite.extract_pose_params(out);
    const std::string video = dataset.identities[s.identity].id + "->" + dataset.identities[t.identity].id;
    result.records.push_back({video, k, Metric::Csim, csim(source, out, suite)});
    result.records.push_back({video, k, Metric::Apd, apd(pt, po)});
    result.records.push_back({video, k, Metric::Aed, aed(pt, po)});
  }
  sort_records(result.records);
  return result;
}

void write_records(std::ostream& out, const std::vector<EvalRecord>& records) {
  out << "video\tframe\tmetric\tvalue\n";
  out.precision(17);
  for (const EvalRecord& r : records) {
    out << r.video << '\t' << r.frame << '\t' << metric_name(r.metric) << '\t' << r.value << '\n';
  }
}

std::vector<MetricSummary> summarize(const std::vector<EvalRecord>& records) {
  std::map<Metric, std::pair<double, std::size_t>> acc;
  for (const EvalRecord& r : records) {
    acc[r.metric].first += r.value;
    ++acc[r.metric].second;
  }
  std::vector<MetricSummary> out;
  for (const auto& [m, v] : acc) out.push_back({m, v.first / static_cast<double>(v.second), v.second});
  return out;
}

void write_summary(std::ostream& out, const std::vector<MetricSummary>& summary) {
  out << "metric\tmean\tcount\n";
  out.precision(9);
  for (const MetricSummary& s : summary) out << metric_name(s.metric) << '\t' << s.mean << '\t' << s.count << '\n';
}

}  // namespace facereenact
