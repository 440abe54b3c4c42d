// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance [--only N ...] [--work-dir DIR] [--keep]

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "facereenact/metrics.hpp"
#include "facereenact/trainer.hpp"

namespace fs = std::filesystem;
using namespace facereenact;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

PoseParams random_pose(Rng& rng, std::size_t e) {
  PoseParams p;
  p.euler = {rng.uniform(-30, 30), rng.uniform(-15, 15), rng.uniform(-12, 12)};
  p.expression.resize(e);
  for (double& x : p.expression) x = rng.uniform(-1, 1);
  p.gaze = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)};
  return p;
}

template <class T>
Tensor<T> random_face(Rng& rng, std::size_t res, std::size_t e) {
  const FaceIdentity id = FaceIdentity::sample(rng);
  return render_face(id, random_pose(rng, e), ExpressionBasis(e), res).template cast<T>();
}

// ---------------------------------------------------------------------------

Outcome zero_offset_identity() {
  ModelConfig c;
  c.arch = {"scaled", 32, 64};
  c.hypernet.zero_heads = true;
  Reenactor<float> model(c);
  Rng rng(2024);
  float worst = 0;
  for (int i = 0; i < 20; ++i) {
    const Tensor<float> src = random_face<float>(rng, 32, c.encoders.expression_dim);
    const Tensor<float> tgt = random_face<float>(rng, 32, c.encoders.expression_dim);
    worst = std::max(worst, max_abs_diff(model.reenact(src, tgt), model.invert_and_synthesize(src)));
  }
  return {worst <= 1e-6f, "max |reenact - inversion| = " + fmt(worst) + " over 20 pairs (limit 1e-6)"};
}

// Expected canonical table: (out, in, k) of every layer, ToRGB rows included.
struct LayerRow {
  std::size_t index, out, in, k;
};
constexpr LayerRow kCanonicalLayers[] = {
    {0, 512, 512, 3},  {1, 3, 512, 1},   {2, 512, 512, 3},  {3, 512, 512, 3},  {4, 3, 512, 1},
    {5, 512, 512, 3},  {6, 512, 512, 3}, {7, 3, 512, 1},    {8, 512, 512, 3},  {9, 512, 512, 3},
    {10, 3, 512, 1},   {11, 256, 512, 3}, {12, 256, 256, 3}, {13, 3, 256, 1},  {14, 128, 256, 3},
    {15, 128, 128, 3}, {16, 3, 128, 1},  {17, 64, 128, 3},  {18, 64, 64, 3},   {19, 3, 64, 1},
};

Outcome shape_conformance() {
  std::vector<std::string> bad;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };

  ModelConfig c;
  c.arch = {"canonical", 256, 512};
  c.hypernet.zero_heads = false;
  c.encoders.resolution = 256;
  Reenactor<float> model(c);
  const GeneratorArch& arch = model.arch();

  expect(arch.layers.size() == 20, "20 generator layers");
  for (const LayerRow& row : kCanonicalLayers) {
    const LayerSpec& l = arch.layer(row.index);
    expect(l.out_channels == row.out && l.in_channels == row.in && l.kernel_size == row.k,
           "layer " + std::to_string(row.index) + " dims");
    expect(model.generator().base_kernels()[row.index].shape() == Shape{row.out, row.in, row.k, row.k},
           "layer " + std::to_string(row.index) + " kernel tensor");
  }
  const std::vector<std::size_t> shared_layers{0, 2, 3, 5, 6, 8, 9}, specific_layers{11, 12, 14, 15, 17, 18};
  const BlockAssignment& a = model.hypernet().assignment();
  expect(a.entries.size() == 13, "13 controlled layers");
  expect(a.layers(BlockType::Shared) == shared_layers, "shared layer set");
  expect(a.layers(BlockType::LayerSpecific) == specific_layers, "layer-specific set");

  Rng rng(5);
  const Tensor<float> src = random_face<float>(rng, 256, c.encoders.expression_dim);
  const Tensor<float> tgt = random_face<float>(rng, 256, c.encoders.expression_dim);
  const Tensor<float> f_app = model.encoders().encode_appearance(src).data;
  const Tensor<float> f_p = model.encoders().encode_pose(tgt).data;
  expect(f_app.shape() == Shape{512, 7, 7}, "f_app 512x7x7");
  expect(f_p.shape() == Shape{2048, 7, 7}, "f_p 2048x7x7");
  const Tensor<float> f_r = model.fusion().fuse(stack_features<float>({&f_app}), stack_features<float>({&f_p}), 1);
  expect(f_r.shape() == Shape{512, 1, 7, 7}, "f_r 512x7x7");
  expect(unstack_sample(f_r, 0).shape() == Shape{512, 7, 7}, "f_r sample 512x7x7");

  HypernetTape<float> tape;
  const OffsetPredictions<float> pred = model.hypernet().forward(f_r, 1, &tape);
  const WeightOffsets<float> offsets = expand_offsets(arch, pred, 0);
  expect(offsets.entries.size() == 13, "13 offset tensors");
  for (const auto& [layer, o] : offsets.entries) {
    const LayerSpec& l = arch.layer(layer);
    expect(pred.at(layer).shape() == Shape{1, l.out_channels, l.in_channels}, "1x1 prediction " + std::to_string(layer));
    expect(o.shape() == model.generator().base_kernels()[layer].shape(), "offset " + std::to_string(layer));
  }
  try {
    validate_offsets(arch, offsets);
  } catch (const std::exception& e) {
    bad.push_back(std::string("validate_offsets: ") + e.what());
  }

  // Block internals: conv stack channels and grids, then the FC chain.
  const std::size_t grids[] = {7, 5, 3, 1};
  for (std::size_t bi = 0; bi < a.entries.size(); ++bi) {
    const auto [layer, type] = a.entries[bi];
    const LayerSpec& l = arch.layer(layer);
    const std::size_t width = type == BlockType::Shared ? 128 : 256;
    const auto layout = block_layout(type, l);
    const std::string tag = "block " + std::to_string(layer);
    expect(layout.size() == (type == BlockType::Shared ? 7u : 5u), tag + " depth");
    if (layout.size() < 5) continue;
    for (std::size_t s = 0; s < 4; ++s) {
      expect(layout[s].in == (s == 0 ? 512 : width) && layout[s].out == (s == 3 ? 512 : width), tag + " conv channels");
      expect(layout[s].kernel == 3 && layout[s].stride == 1 && layout[s].pad == (s == 0 ? 1u : 0u), tag + " conv geometry");
      expect(layout[s].out_grid == grids[s], tag + " conv grid");
      const Tensor<float>& act = tape.blocks[bi].acts.at(s);
      expect(act.shape() == Shape{layout[s].out, 1, grids[s], grids[s]}, tag + " activation tensor");
    }
    if (type == BlockType::Shared) {
      expect(layout[4].in == 512 && layout[4].out == 512, tag + " block FC");
      expect(layout[5].in == 512 && layout[5].out == 512u * 512, tag + " shared FC 1");
      expect(layout[6].in == 512 && layout[6].out == 512, tag + " shared FC 2");
      expect(tape.blocks[bi].h.shape() == Shape{512, 1}, tag + " FC output");
    } else {
      expect(layout[4].in == 512 && layout[4].out == l.out_channels * l.in_channels, tag + " head FC");
    }
  }
  if (bad.empty()) return {true, "20 layers, 13 controlled, features, offsets and block internals all exact"};
  std::string detail = std::to_string(bad.size()) + " mismatches, first: " + bad.front();
  return {false, detail};
}

Outcome parameter_counts() {
  const GeneratorArch arch = canonical_arch();
  const BlockAssignment a = BlockAssignment::default_for(arch);
  const double on = static_cast<double>(param_count(a, arch, true).total());
  const double off = static_cast<double>(param_count(a, arch, false).total());
  const bool pass = on >= 2.55e8 && on <= 3.45e8 && off >= 0.95e9 && off <= 1.40e9 && off / on >= 3.5;
  return {pass, "shared " + fmt(on) + " in [2.55e8, 3.45e8], unshared " + fmt(off) + " in [0.95e9, 1.40e9], ratio " +
                    fmt(off / on, 3) + " (>= 3.5)"};
}

Outcome gradient_check() {
  ModelConfig c;
  c.arch = {"scaled", 8, 8};
  c.encoders.expression_dim = 4;
  c.hypernet.zero_heads = false;
  c.assignment = BlockAssignment{{{0, BlockType::Shared}, {2, BlockType::Shared}, {3, BlockType::LayerSpecific}}};
  Reenactor<double> model(c);
  Rng rng(77);
  const Tensor<double> a = random_face<double>(rng, 8, 4), b = random_face<double>(rng, 8, 4);
  const LossOptions opts;

  std::size_t checked = 0, nonzero = 0;
  double worst = 0;
  for (Task task : {Task::Inversion, Task::Self, Task::Cross}) {
    const Tensor<double>& tgt = task == Task::Inversion ? a : b;
    auto objective = [&](Tensor<double>* d_out, ReenactTape<double>* tape) {
      const auto out = model.forward({&a}, {&tgt}, tape);
      LossSample<double> s{&a, &tgt, &out[0], task};
      return phase_objective(s, model.encoders(), opts, d_out).total;
    };
    ReenactTape<double> tape;
    Tensor<double> d_out;
    objective(&d_out, &tape);
    for (auto* p : model.trainable_params()) p->zero_grad();
    model.backward(tape, {d_out});
    auto f = [&] { return objective(nullptr, nullptr); };
    for (auto* p : model.trainable_params()) {
      for (int k = 0; k < 2; ++k) {
        const std::size_t i = rng.uniform_index(p->size());
        auto& x = p->value.values();
        const double saved = x[i], h = 1e-4;  // smaller steps are dominated by round-off here
        x[i] = saved + h;
        const double up = f();
        x[i] = saved - h;
        const double down = f();
        x[i] = saved;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, rel_err(p->grad[i], fd));
        ++checked;
        nonzero += std::abs(fd) > 1e-9;
      }
    }
  }
  const bool pass = checked >= 100 && worst < 1e-3 && nonzero * 2 > checked;
  return {pass, std::to_string(checked) + " coordinates (" + std::to_string(nonzero) +
                    " nonzero), max rel err " + fmt(worst, 3) + " (limit 1e-3)"};
}

// ---------------------------------------------------------------------------
// Smoke training, shared by the training and determinism criteria.

constexpr std::size_t kTrainFrames = 15;

FrameDataset frame_range(const FrameDataset& full, std::size_t begin, std::size_t end) {
  FrameDataset out;
  out.resolution = full.resolution;
  for (const Identity& id : full.identities) {
    Identity part{id.id, {}};
    for (std::size_t f = begin; f < end; ++f) part.frames.push_back(id.frames.at(f));
    out.identities.push_back(std::move(part));
  }
  return out;
}

CurriculumSchedule smoke_schedule() {
  CurriculumSchedule s;
  for (auto [tag, steps] : {std::pair{PhaseTag::Inversion, 200}, {PhaseTag::Self, 200}, {PhaseTag::Mixed, 50}}) {
    PhaseSpec p = PhaseSpec::defaults(tag, steps);
    p.batch_size = 4;
    s.phases.push_back(p);
  }
  return s;
}

struct SmokeRun {
  fs::path dir;
  std::vector<double> phase1_totals;
  double apd_phase1 = 0, apd_phase2 = 0;
  double seconds = 0;
};

double heldout_apd(const fs::path& checkpoint, const FrameDataset& heldout) {
  const CheckpointInfo info = read_checkpoint_info(checkpoint);
  Reenactor<float> model(info.config.model);
  load_parameters(checkpoint, model);
  heldout.register_poses(model.encoders().oracle());
  const EvalResult r = evaluate_self([&](const Tensor<float>& s, const Tensor<float>& t) { return model.reenact(s, t); },
                                     heldout, model.encoders());
  for (const MetricSummary& m : summarize(r.records))
    if (m.metric == Metric::Apd) return m.mean;
  throw std::runtime_error("no apd records in held-out evaluation");
}

SmokeRun smoke_run(const fs::path& dir) {
  const auto t0 = Clock::now();
  const FrameDataset full = generate_synthetic_dataset(10, 20, 32, 7);
  const FrameDataset train = frame_range(full, 0, kTrainFrames);
  const FrameDataset heldout = frame_range(full, kTrainFrames, 20);
  TrainerConfig config;
  config.seed = 7;
  Trainer trainer(config, train);
  SmokeRun run;
  run.dir = dir;
  fs::remove_all(dir);
  run_curriculum(trainer, smoke_schedule(), dir, 0, [&](const StepResult& r) {
    if (trainer.phase_index() == 0) run.phase1_totals.push_back(r.total);
  });
  run.apd_phase1 = heldout_apd(dir / "checkpoint_phase1", heldout);
  run.apd_phase2 = heldout_apd(dir / "checkpoint_phase2", heldout);
  run.seconds = seconds_since(t0);
  return run;
}

double window_mean(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  double s = 0;
  for (std::size_t i = begin; i < end; ++i) s += v.at(i);
  return s / static_cast<double>(end - begin);
}

fs::path g_work_dir;
std::optional<SmokeRun> g_first_run;

const SmokeRun& first_run() {
  if (!g_first_run) g_first_run = smoke_run(g_work_dir / "smoke_a");
  return *g_first_run;
}

Outcome curriculum_smoke() {
  const SmokeRun& run = first_run();
  const std::vector<double>& v = run.phase1_totals;
  const double reference = window_mean(v, 10, 20);
  const double final = window_mean(v, v.size() - 10, v.size());
  const double drop = 1 - final / reference;
  const bool pass = drop >= 0.5 && run.apd_phase2 < run.apd_phase1 && run.seconds < 15 * 60;
  return {pass, "phase 1 loss " + fmt(reference) + " -> " + fmt(final) + " (" + fmt(100 * drop, 3) +
                    "% drop, need 50%), held-out apd " + fmt(run.apd_phase1) + " -> " + fmt(run.apd_phase2) +
                    " deg, " + fmt(run.seconds, 3) + " s (limit 900)"};
}

Outcome cross_masking() {
  EncoderSuite<double> suite({}, scaled_arch(32, 64).num_styles());
  Rng rng(31);
  const Tensor<double> src = random_face<double>(rng, 32, kDefaultExpressionDim);
  Tensor<double> tgt = random_face<double>(rng, 32, kDefaultExpressionDim);
  Tensor<double> gen = src;
  for (auto& x : gen.values()) x += 0.05 * rng.normal();

  auto total = [&](Task task) {
    LossSample<double> s{&src, &tgt, &gen, task};
    return phase_objective(s, suite, {}).total;
  };
  // The red channel of the target reaches only the pixel and perceptual
  // terms, so every central difference on it must vanish for cross samples.
  const double h = 1e-3;
  std::size_t nonzero_cross = 0, nonzero_self = 0;
  const std::size_t res = tgt.dim(1);
  for (std::size_t i = 0; i < res; ++i) {
    for (std::size_t j = 0; j < res; ++j) {
      double& x = tgt.at(0, i, j);
      const double saved = x;
      x = saved + h;
      const double cross_up = total(Task::Cross);
      const double self_up = (i % 4 == 0 && j % 4 == 0) ? total(Task::Self) : 0;
      x = saved - h;
      const double cross_down = total(Task::Cross);
      const double self_down = (i % 4 == 0 && j % 4 == 0) ? total(Task::Self) : 0;
      x = saved;
      nonzero_cross += (cross_up - cross_down) != 0.0;
      nonzero_self += (self_up - self_down) != 0.0;
    }
  }

  // Analytic gradient on the generated image holds only identity and shape parts.
  LossSample<double> s{&src, &tgt, &gen, Task::Cross};
  Tensor<double> d_gen, g_id, g_sh;
  const LossReport report = phase_objective(s, suite, {}, &d_gen);
  l_id(src, gen, suite, &g_id);
  l_shape(tgt, gen, suite, &g_sh);
  const LossWeights w;
  double worst = 0;
  for (std::size_t i = 0; i < d_gen.size(); ++i)
    worst = std::max(worst, std::abs(d_gen[i] - (w.lambda_id * g_id[i] + w.lambda_sh * g_sh[i])));

  const bool masked = !report.included[static_cast<std::size_t>(LossTerm::Pix)] &&
                      !report.included[static_cast<std::size_t>(LossTerm::Lpips)];
  const bool pass = nonzero_cross == 0 && nonzero_self > 0 && masked && worst < 1e-12;
  return {pass, std::to_string(nonzero_cross) + " of " + std::to_string(res * res) +
                    " target red-channel differences nonzero for cross (self control: " +
                    std::to_string(nonzero_self) + " of " + std::to_string(res * res / 16) +
                    " nonzero), d_gen residual " + fmt(worst, 3)};
}

double hadamard8(std::size_t row, std::size_t col) { return (__builtin_popcount(row & col) % 2) ? -1.0 : 1.0; }

std::vector<std::vector<double>> hadamard_design(const std::vector<double>& mu, const std::vector<double>& sigma) {
  const double unit = std::sqrt(7.0 / 8.0);
  std::vector<std::vector<double>> rows(8, std::vector<double>(mu.size()));
  for (std::size_t n = 0; n < 8; ++n)
    for (std::size_t k = 0; k < mu.size(); ++k) rows[n][k] = mu[k] + sigma[k] * unit * hadamard8(n, k + 1);
  return rows;
}

Outcome metric_sanity() {
  std::vector<std::string> bad;
  const FrameDataset ds = generate_synthetic_dataset(10, 20, 32, 7);
  EncoderSuite<float> suite({}, scaled_arch(32, 64).num_styles());
  double worst_csim = 0, worst_pose = 0;
  for (std::size_t i = 0; i < ds.identities.size(); ++i) {
    const Frame& f = ds.frame(i, i);
    worst_csim = std::max(worst_csim, std::abs(csim(f.image, f.image, suite) - 1.0));
    worst_pose = std::max({worst_pose, apd(*f.pose, *f.pose), aed(*f.pose, *f.pose), gaze_error(*f.pose, *f.pose),
                           gaze_error(f.image, f.image, suite)});
  }
  if (worst_csim > 1e-6) bad.push_back("csim(x,x) off by " + fmt(worst_csim));
  if (worst_pose != 0) bad.push_back("identity pose distance " + fmt(worst_pose));

  std::vector<Tensor<float>> set;
  for (std::size_t i = 0; i < 10; ++i) set.push_back(ds.frame(i, 3).image);
  const double self_fd = frechet_score(set, set, suite.appearance());
  if (std::abs(self_fd) > 1e-6) bad.push_back("frechet(S,S) = " + fmt(self_fd));

  // Closed form for diagonal covariances: |mu_a - mu_b|^2 + sum (s_a - s_b)^2.
  const std::vector<double> mu_a = {0.5, -1.0, 2.0, 0.0, 1.0}, mu_b = {1.5, 0.0, 1.0, 0.25, -2.0};
  const std::vector<double> s_a = {1.0, 2.0, 0.5, 1.5, 0.75}, s_b = {2.0, 0.5, 0.5, 1.0, 3.0};
  double expected = 0;
  for (std::size_t k = 0; k < mu_a.size(); ++k)
    expected += (mu_a[k] - mu_b[k]) * (mu_a[k] - mu_b[k]) + (s_a[k] - s_b[k]) * (s_a[k] - s_b[k]);
  const double oracle_err = rel_err(frechet_distance(hadamard_design(mu_a, s_a), hadamard_design(mu_b, s_b)), expected);
  if (oracle_err >= 1e-4) bad.push_back("frechet oracle rel err " + fmt(oracle_err));

  const PairBenchmark bench = build_large_pose_benchmark(ds, 15, 5);
  std::vector<std::size_t> per_video(ds.identities.size(), 0);
  std::size_t below = 0, cross_video = 0;
  for (const BenchmarkPair& p : bench.pairs) {
    const double d = apd(*ds.frame(p.source.identity, p.source.frame).pose, *ds.frame(p.target.identity, p.target.frame).pose);
    below += !(d > 15.0);
    cross_video += p.source.identity != p.target.identity;
    ++per_video.at(p.source.identity);
  }
  // Brute force: a video with q qualifying pairs contributes min(q, 5).
  std::size_t expected_pairs = 0;
  for (std::size_t v = 0; v < ds.identities.size(); ++v) {
    std::size_t q = 0;
    const auto& frames = ds.identities[v].frames;
    for (std::size_t i = 0; i < frames.size(); ++i)
      for (std::size_t j = i + 1; j < frames.size(); ++j) q += apd(*frames[i].pose, *frames[j].pose) > 15.0;
    expected_pairs += std::min<std::size_t>(q, 5);
  }
  const std::size_t most = *std::max_element(per_video.begin(), per_video.end());
  if (below) bad.push_back(std::to_string(below) + " benchmark pairs not above 15 deg");
  if (most > 5) bad.push_back("a video has " + std::to_string(most) + " pairs");
  if (cross_video) bad.push_back("benchmark pairs span videos");
  if (bench.pairs.size() != expected_pairs) bad.push_back("benchmark size " + std::to_string(bench.pairs.size()));

  if (!bad.empty()) return {false, bad.front()};
  return {true, "csim/apd/aed/gaze identities exact, frechet(S,S) = " + fmt(self_fd, 3) + ", oracle rel err " +
                    fmt(oracle_err, 3) + ", " + std::to_string(bench.pairs.size()) + " benchmark pairs all > 15 deg, max " +
                    std::to_string(most) + " per video"};
}

Outcome batch_composition() {
  const FrameDataset ds = generate_synthetic_dataset(10, 20, 8, 7, 4);
  Rng rng(99);
  std::size_t exact = 0, malformed = 0;
  for (int n = 0; n < 100; ++n) {
    const auto batch = sample_batch(ds, PairPolicy::HalfSelfHalfCross, 16, rng);
    std::size_t self = 0, cross = 0;
    for (const TrainPair& p : batch) {
      if (p.task == Task::Self) {
        ++self;
        malformed += p.source_identity != p.target_identity || p.source_frame == p.target_frame;
      } else if (p.task == Task::Cross) {
        ++cross;
        malformed += p.source_identity == p.target_identity;
      }
    }
    exact += batch.size() == 16 && self == 8 && cross == 8;
  }
  return {exact == 100 && malformed == 0,
          std::to_string(exact) + " of 100 batches are 8 self + 8 cross, " + std::to_string(malformed) + " malformed pairs"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const SmokeRun& a = first_run();
  const SmokeRun b = smoke_run(g_work_dir / "smoke_b");
  std::size_t rows = 0;
  std::vector<std::string> differing;
  for (const char* log : {"phase1_log.tsv", "phase2_log.tsv", "phase3_log.tsv"}) {
    const std::string la = slurp(a.dir / log), lb = slurp(b.dir / log);
    if (la != lb) differing.push_back(log);
    rows += static_cast<std::size_t>(std::count(la.begin(), la.end(), '\n')) - 1;
  }
  // Mixed phases log a self row and a cross row per step.
  std::size_t expected_rows = 0;
  for (const PhaseSpec& p : smoke_schedule().phases)
    expected_rows += p.steps * (p.pair_policy == PairPolicy::HalfSelfHalfCross ? 2 : 1);
  const bool pass = differing.empty() && rows == expected_rows;
  if (!differing.empty()) return {false, "logs differ: " + differing.front()};
  return {pass, std::to_string(rows) + " log rows (expected " + std::to_string(expected_rows) +
                    ") bitwise identical across two runs"};
}

struct Criterion {
  int number;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string work_dir;
  bool keep = false;
  app.add_option("--only", only, "Criterion numbers to run (default: all)");
  app.add_option("--work-dir", work_dir, "Directory for smoke-training runs");
  app.add_flag("--keep", keep, "Keep the smoke-training runs");
  CLI11_PARSE(app, argc, argv);

  g_work_dir = work_dir.empty() ? fs::temp_directory_path() / ("facereenact_acceptance_" + std::to_string(::getpid()))
                                : fs::path(work_dir);
  fs::create_directories(g_work_dir);

  const std::vector<Criterion> criteria = {
      {1, "zero-offset identity", zero_offset_identity},
      {2, "canonical shape conformance", shape_conformance},
      {3, "parameter counts", parameter_counts},
      {4, "gradient correctness", gradient_check},
      {5, "curriculum smoke training", curriculum_smoke},
      {6, "cross-sample loss masking", cross_masking},
      {7, "metric sanity and benchmark", metric_sanity},
      {8, "mixed batch composition", batch_composition},
      {9, "training determinism", determinism},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.number) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << c.number << " " << (o.pass ? "PASS" : "FAIL") << "  " << c.name << ": " << o.detail
              << " [" << fmt(seconds_since(t0), 3) << " s]" << std::endl;
  }
  if (!keep && work_dir.empty()) fs::remove_all(g_work_dir);
  return failures ? 1 : 0;
}
