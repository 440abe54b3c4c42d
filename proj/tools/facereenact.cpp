// Command-line entry point: train, reenact, evaluate, benchmark, param-count,
// synth-data. Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "facereenact/config.hpp"
#include "facereenact/metrics.hpp"
#include "facereenact/trainer.hpp"

namespace fs = std::filesystem;
using namespace facereenact;

namespace {

constexpr const char* kOutputEnv = "FACEREENACT_OUTPUT_DIR";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flag, then environment, then the fallback.
fs::path output_dir(const std::string& flag, const fs::path& fallback) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutputEnv); env && *env) return env;
  return fallback;
}

// Everything is written to a sibling staging directory and renamed into place
// on commit, so a failed command leaves no partial output behind.
class StagedDir {
 public:
  StagedDir(fs::path target, bool force) : target_(std::move(target)) {
    if (fs::exists(target_) && !force) {
      throw std::runtime_error("output " + target_.string() + " already exists (use --force to replace it)");
    }
    staging_ = target_;
    staging_ += ".partial";
    fs::remove_all(staging_);
    if (target_.has_parent_path()) fs::create_directories(target_.parent_path());
    fs::create_directories(staging_);
  }
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;

  const fs::path& path() const { return staging_; }
  const fs::path& target() const { return target_; }

  void commit() {
    fs::remove_all(target_);
    fs::rename(staging_, target_);
    committed_ = true;
  }

 private:
  fs::path target_, staging_;
  bool committed_ = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<fs::path> png_files(const fs::path& p) {
  if (fs::is_regular_file(p)) return {p};
  if (!fs::is_directory(p)) throw std::runtime_error("no such file or directory: " + p.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(p)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no PNG frames in " + p.string());
  return files;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, resume, output;
  bool force = false, quiet = false;
  std::size_t print_every = 50;
};

int cmd_train(const TrainArgs& a) {
  const RunConfig config = load_run_config(a.config);
  const FrameDataset dataset = config.dataset.load(config.trainer.model.encoders.expression_dim);
  Trainer trainer(config.trainer, dataset);
  StagedDir out(output_dir(a.output, config.output_dir), a.force);
  write_text(out.path() / "config.json", to_json(config).dump(2) + "\n");
  if (!a.resume.empty()) {
    const CurriculumSchedule stored = trainer.load(a.resume);
    if (!(stored == config.schedule)) {
      throw ConfigError("checkpoint " + a.resume + " was written for a different schedule");
    }
    // Carry the earlier logs over so the resumed run continues them.
    const fs::path previous = fs::path(a.resume).parent_path();
    for (const auto& e : fs::directory_iterator(previous.empty() ? "." : previous)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("phase", 0) == 0 && e.path().extension() == ".tsv") fs::copy_file(e.path(), out.path() / name);
    }
    std::cout << "resuming at step " << trainer.global_step() << "\n";
  }
  const std::size_t every = a.print_every;
  const fs::path last = run_curriculum(trainer, config.schedule, out.path(), config.checkpoint_every,
                                       [&](const StepResult& r) {
                                         if (a.quiet || every == 0 || trainer.global_step() % every != 0) return;
                                         std::cout << "step " << trainer.global_step() << " phase "
                                                   << phase_number(config.schedule.phases[trainer.phase_index()].phase)
                                                   << " loss " << std::setprecision(6) << r.total << "\n";
                                       });
  out.commit();
  std::cout << "final checkpoint: " << (out.target() / last.filename()).string() << "\n";
  return 0;
}

struct ReenactArgs {
  std::string source, target, checkpoint, output;
  bool force = false;
};

int cmd_reenact(const ReenactArgs& a) {
  const CheckpointInfo info = read_checkpoint_info(a.checkpoint);
  Reenactor<float> model(info.config.model);
  load_parameters(a.checkpoint, model);
  const Tensor<float> source = read_png(a.source);
  const std::vector<fs::path> targets = png_files(a.target);
  StagedDir out(output_dir(a.output, "reenacted"), a.force);
  for (const fs::path& t : targets) {
    write_png(out.path() / t.filename(), model.reenact(source, read_png(t)));
  }
  out.commit();
  std::cout << "wrote " << targets.size() << " frame(s) to " << out.target().string() << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint, dataset, pairs, output;
  bool force = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const CheckpointInfo info = read_checkpoint_info(a.checkpoint);
  Reenactor<float> model(info.config.model);
  load_parameters(a.checkpoint, model);
  const FrameDataset dataset = ingest(a.dataset);
  dataset.register_poses(model.encoders().oracle());
  const ReenactFn fn = [&](const Tensor<float>& s, const Tensor<float>& t) { return model.reenact(s, t); };
  EvalResult result;
  if (a.pairs.empty()) {
    result = evaluate_self(fn, dataset, model.encoders());
  } else {
    std::ifstream in(a.pairs);
    if (!in) throw std::runtime_error("cannot open pair list " + a.pairs);
    std::vector<std::pair<FrameRef, FrameRef>> pairs;
    for (const BenchmarkPair& p : read_benchmark(in, dataset).pairs) pairs.emplace_back(p.source, p.target);
    result = evaluate_cross(fn, dataset, pairs, model.encoders());
  }
  for (const std::string& w : result.warnings) std::cerr << "warning: " << w << "\n";
  StagedDir out(output_dir(a.output, "evaluation"), a.force);
  const auto summary = summarize(result.records);
  {
    std::ofstream records(out.path() / "records.tsv"), table(out.path() / "summary.tsv");
    write_records(records, result.records);
    write_summary(table, summary);
    if (!records || !table) throw std::runtime_error("cannot write evaluation output");
  }
  out.commit();
  write_summary(std::cout, summary);
  return 0;
}

struct BenchmarkArgs {
  std::string dataset, output;
  double threshold = 15;
  std::size_t per_video = 5;
  bool force = false;
};

int cmd_benchmark(const BenchmarkArgs& a) {
  const FrameDataset dataset = ingest(a.dataset);
  const PairBenchmark bench = build_large_pose_benchmark(dataset, a.threshold, a.per_video);
  StagedDir out(output_dir(a.output, "benchmark"), a.force);
  {
    std::ofstream f(out.path() / "pairs.tsv");
    write_benchmark(f, dataset, bench);
    if (!f) throw std::runtime_error("cannot write pair list");
  }
  out.commit();
  std::cout << bench.pairs.size() << " pairs with apd > " << a.threshold << " deg written to "
            << (out.target() / "pairs.tsv").string() << "\n";
  return 0;
}

struct ParamCountArgs {
  std::string arch = "canonical";
  std::size_t resolution = 32, channel_cap = 64;
};

int cmd_param_count(const ParamCountArgs& a) {
  const GeneratorArch arch = ArchConfig{a.arch, a.resolution, a.channel_cap}.build();
  const BlockAssignment assignment = BlockAssignment::default_for(arch);
  const std::uint64_t shared = param_count(assignment, arch, true).total();
  const std::uint64_t unshared = param_count(assignment, arch, false).total();
  std::cout << "arch\t" << a.arch << "\n"
            << "controlled_layers\t" << assignment.entries.size() << "\n"
            << "shared\t" << shared << "\t" << std::scientific << std::setprecision(3)
            << static_cast<double>(shared) << "\n"
            << std::defaultfloat << "unshared\t" << unshared << "\t" << std::scientific << std::setprecision(3)
            << static_cast<double>(unshared) << "\n"
            << std::fixed << std::setprecision(2) << "ratio\t"
            << static_cast<double>(unshared) / static_cast<double>(shared) << "\n";
  return 0;
}

struct SynthArgs {
  std::size_t identities = 10, frames = 20, resolution = 32, expression_dim = kDefaultExpressionDim;
  std::uint64_t seed = 7;
  std::string output;
  bool force = false;
};

int cmd_synth(const SynthArgs& a) {
  const FrameDataset ds = generate_synthetic_dataset(a.identities, a.frames, a.resolution, a.seed, a.expression_dim);
  StagedDir out(output_dir(a.output, "synthetic"), a.force);
  write_dataset(ds, out.path());
  out.commit();
  std::cout << "wrote " << ds.num_frames() << " frames of " << ds.identities.size() << " identities to "
            << out.target().string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hypernetwork face reenactment: training, inference and evaluation"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run the curriculum from a JSON run config");
  t->add_option("--config", train.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  t->add_option("--resume", train.resume, "Checkpoint directory to resume from")->check(CLI::ExistingDirectory);
  t->add_option("--output", train.output, std::string("Output directory (else $") + kOutputEnv + ", else config)");
  t->add_option("--print-every", train.print_every, "Progress line every N steps (0: never)");
  t->add_flag("--quiet", train.quiet, "No progress lines");
  t->add_flag("--force", train.force, "Replace an existing output directory");

  ReenactArgs reenact;
  auto* r = app.add_subcommand("reenact", "Reenact one source frame with the pose of each target frame");
  r->add_option("--source", reenact.source, "Source frame (PNG)")->required()->check(CLI::ExistingFile);
  r->add_option("--target", reenact.target, "Target frame or directory of frames")->required()->check(CLI::ExistingPath);
  r->add_option("--checkpoint", reenact.checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  r->add_option("--output", reenact.output, "Output directory");
  r->add_flag("--force", reenact.force, "Replace an existing output directory");

  EvaluateArgs evaluate;
  auto* e = app.add_subcommand("evaluate", "Self evaluation over a dataset, or cross evaluation over a pair list");
  e->add_option("--checkpoint", evaluate.checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--dataset", evaluate.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--pairs", evaluate.pairs, "Pair list (benchmark format); enables cross evaluation")
      ->check(CLI::ExistingFile);
  e->add_option("--output", evaluate.output, "Output directory");
  e->add_flag("--force", evaluate.force, "Replace an existing output directory");

  BenchmarkArgs benchmark;
  auto* b = app.add_subcommand("benchmark", "Build the large-pose pair benchmark of a dataset");
  b->add_option("--dataset", benchmark.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  b->add_option("--threshold", benchmark.threshold, "Minimum pose distance in degrees (strict)");
  b->add_option("--per-video", benchmark.per_video, "Pairs per identity");
  b->add_option("--output", benchmark.output, "Output directory");
  b->add_flag("--force", benchmark.force, "Replace an existing output directory");

  ParamCountArgs pc;
  auto* p = app.add_subcommand("param-count", "Print hypernetwork parameter counts with and without sharing");
  p->add_option("--arch", pc.arch, "canonical or scaled")->check(CLI::IsMember({"canonical", "scaled"}));
  p->add_option("--resolution", pc.resolution, "Output resolution of the scaled arch");
  p->add_option("--channel-cap", pc.channel_cap, "Channel cap of the scaled arch");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "Write a synthetic frame dataset");
  s->add_option("--identities", synth.identities, "Number of identities");
  s->add_option("--frames", synth.frames, "Frames per identity");
  s->add_option("--resolution", synth.resolution, "Frame size in pixels");
  s->add_option("--expression-dim", synth.expression_dim, "Expression coefficients per frame");
  s->add_option("--seed", synth.seed, "Seed");
  s->add_option("--output", synth.output, "Output directory");
  s->add_flag("--force", synth.force, "Replace an existing output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    std::cerr << "error: " << err.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*t) return cmd_train(train);
    if (*r) return cmd_reenact(reenact);
    if (*e) return cmd_evaluate(evaluate);
    if (*b) return cmd_benchmark(benchmark);
    if (*p) return cmd_param_count(pc);
    if (*s) return cmd_synth(synth);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
