#include "facereenact/trainer.hpp"

#include <bit>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "facereenact/config.hpp"
#include "facereenact/kernels.hpp"

namespace facereenact {

namespace fs = std::filesystem;
using nlohmann::json;

int phase_number(PhaseTag p) { return static_cast<int>(p); }

PhaseTag phase_from_number(int n) {
  if (n < 1 || n > 3) throw ConfigError("phase must be 1, 2 or 3, got " + std::to_string(n));
  return static_cast<PhaseTag>(n);
}

const char* pair_policy_name(PairPolicy p) {
  switch (p) {
    case PairPolicy::SameFrame: return "same_frame";
    case PairPolicy::SameIdentity: return "same_identity";
    case PairPolicy::HalfSelfHalfCross: return "half_self_half_cross";
  }
  return "?";
}

PairPolicy parse_pair_policy(const std::string& name) {
  for (PairPolicy p : {PairPolicy::SameFrame, PairPolicy::SameIdentity, PairPolicy::HalfSelfHalfCross}) {
    if (name == pair_policy_name(p)) return p;
  }
  throw ConfigError("unknown pair policy '" + name + "'");
}

PairPolicy default_pair_policy(PhaseTag p) {
  switch (p) {
    case PhaseTag::Inversion: return PairPolicy::SameFrame;
    case PhaseTag::Self: return PairPolicy::SameIdentity;
    case PhaseTag::Mixed: return PairPolicy::HalfSelfHalfCross;
  }
  return PairPolicy::SameFrame;
}

NonFiniteLossError::NonFiniteLossError(std::size_t s, std::string t, std::size_t b)
    : std::runtime_error("non-finite loss at step " + std::to_string(s) + ", term " + t + ", batch index " +
                         std::to_string(b)),
      step(s),
      batch_index(b),
      term(std::move(t)) {}

PhaseSpec PhaseSpec::defaults(PhaseTag phase, std::size_t steps) {
  PhaseSpec p;
  p.phase = phase;
  p.learning_rate = phase == PhaseTag::Mixed ? 1e-4 : 2e-4;
  p.batch_size = 16;
  p.steps = steps;
  p.pair_policy = default_pair_policy(phase);
  return p;
}

CurriculumSchedule CurriculumSchedule::standard(std::size_t steps1, std::size_t steps2, std::size_t steps3) {
  return {{PhaseSpec::defaults(PhaseTag::Inversion, steps1), PhaseSpec::defaults(PhaseTag::Self, steps2),
           PhaseSpec::defaults(PhaseTag::Mixed, steps3)}};
}

void CurriculumSchedule::validate() const {
  for (std::size_t i = 0; i < phases.size(); ++i) {
    const PhaseSpec& p = phases[i];
    if (i > 0 && phase_number(p.phase) <= phase_number(phases[i - 1].phase)) {
      throw ConfigError("curriculum phases must be strictly increasing, got phase " +
                        std::to_string(phase_number(p.phase)) + " after phase " +
                        std::to_string(phase_number(phases[i - 1].phase)));
    }
    if (p.batch_size == 0) throw ConfigError("phase " + std::to_string(phase_number(p.phase)) + " has batch size 0");
    if (!(p.learning_rate >= 0) || !std::isfinite(p.learning_rate)) {
      throw ConfigError("phase " + std::to_string(phase_number(p.phase)) + " has an invalid learning rate");
    }
  }
}

namespace {

void require_frames(const FrameDataset& dataset, std::size_t minimum, const char* why) {
  for (const auto& id : dataset.identities) {
    if (id.frames.size() < minimum) {
      throw InsufficientDataError(std::string(why) + " need at least " + std::to_string(minimum) +
                                  " frames per identity; identity '" + id.id + "' has " +
                                  std::to_string(id.frames.size()));
    }
  }
}

TrainPair self_pair(const FrameDataset& dataset, Rng& rng) {
  TrainPair p;
  p.task = Task::Self;
  p.source_identity = p.target_identity = rng.uniform_index(dataset.identities.size());
  const std::size_t n = dataset.identities[p.source_identity].frames.size();
  p.source_frame = rng.uniform_index(n);
  p.target_frame = rng.uniform_index(n - 1);
  if (p.target_frame >= p.source_frame) ++p.target_frame;
  return p;
}

TrainPair cross_pair(const FrameDataset& dataset, Rng& rng) {
  const std::size_t n = dataset.identities.size();
  TrainPair p;
  p.task = Task::Cross;
  p.source_identity = rng.uniform_index(n);
  do {
    p.target_identity = rng.uniform_index(n);
  } while (p.target_identity == p.source_identity);
  p.source_frame = rng.uniform_index(dataset.identities[p.source_identity].frames.size());
  p.target_frame = rng.uniform_index(dataset.identities[p.target_identity].frames.size());
  return p;
}

}  // namespace

std::vector<TrainPair> sample_batch(const FrameDataset& dataset, PairPolicy policy, std::size_t batch_size,
                                    Rng& rng) {
  if (dataset.num_frames() == 0) throw InsufficientDataError("dataset has no frames");
  std::vector<TrainPair> batch;
  batch.reserve(batch_size);
  switch (policy) {
    case PairPolicy::SameFrame: {
      const std::size_t total = dataset.num_frames();
      for (std::size_t b = 0; b < batch_size; ++b) {
        std::size_t k = rng.uniform_index(total), i = 0;
        while (k >= dataset.identities[i].frames.size()) k -= dataset.identities[i++].frames.size();
        batch.push_back({i, k, i, k, Task::Inversion});
      }
      break;
    }
    case PairPolicy::SameIdentity:
      require_frames(dataset, 2, "self-reenactment pairs");
      for (std::size_t b = 0; b < batch_size; ++b) batch.push_back(self_pair(dataset, rng));
      break;
    case PairPolicy::HalfSelfHalfCross:
      require_frames(dataset, 2, "self-reenactment pairs");
      if (dataset.identities.size() < 2) {
        throw InsufficientDataError("cross-reenactment pairs need at least 2 identities; dataset has " +
                                    std::to_string(dataset.identities.size()));
      }
      for (std::size_t b = 0; b < (batch_size + 1) / 2; ++b) batch.push_back(self_pair(dataset, rng));
      for (std::size_t b = 0; b < batch_size / 2; ++b) batch.push_back(cross_pair(dataset, rng));
      break;
  }
  return batch;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(TrainerConfig config, const FrameDataset& dataset)
    : config_(std::move(config)), dataset_(dataset), model_(config_.model), rng_(config_.seed) {
  config_.loss.weights.validate();
  if (dataset_.resolution != model_.arch().output_resolution) {
    throw ConfigError("dataset resolution " + std::to_string(dataset_.resolution) +
                      " does not match the generator resolution " +
                      std::to_string(model_.arch().output_resolution));
  }
  dataset_.register_poses(model_.encoders().oracle());
  for (auto* p : model_.trainable_params()) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

StepResult Trainer::train_step(const std::vector<TrainPair>& batch, const PhaseSpec& spec) {
  if (batch.empty()) throw ShapeError("empty training batch");
  std::vector<const Tensor<float>*> sources, targets;
  for (const TrainPair& p : batch) {
    sources.push_back(&dataset_.frame(p.source_identity, p.source_frame).image);
    targets.push_back(&dataset_.frame(p.target_identity, p.target_frame).image);
  }
  ReenactTape<float> tape;
  const std::vector<Tensor<float>> out = model_.forward(sources, targets, &tape);

  const float scale = 1.0f / static_cast<float>(batch.size());
  std::vector<Tensor<float>> d_out(batch.size());
  std::vector<LossReport> reports;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (!out[b].all_finite()) {
      // Every active term of a non-finite image is non-finite; name the first one.
      const auto active = task_terms(batch[b].task, config_.loss);
      std::size_t t = 0;
      while (t + 1 < kNumLossTerms && !active[t]) ++t;
      throw NonFiniteLossError(global_step_, loss_term_name(static_cast<LossTerm>(t)), b);
    }
    const LossSample<float> s{sources[b], targets[b], &out[b], batch[b].task};
    LossReport r = phase_objective(s, model_.encoders(), config_.loss, &d_out[b]);
    for (std::size_t t = 0; t < kNumLossTerms; ++t) {
      if (!std::isfinite(r.raw[t]) || !std::isfinite(r.weighted[t])) {
        throw NonFiniteLossError(global_step_, loss_term_name(static_cast<LossTerm>(t)), b);
      }
    }
    if (!std::isfinite(r.total)) throw NonFiniteLossError(global_step_, "total", b);
    for (float& g : d_out[b].values()) g *= scale;
    reports.push_back(r);
  }

  for (auto* p : model_.trainable_params()) p->zero_grad();
  model_.backward(tape, d_out);
  adam_update(spec.learning_rate);

  StepResult result;
  for (const Task task : {Task::Inversion, Task::Self, Task::Cross}) {
    StepLog log;
    log.step = global_step_;
    log.phase = spec.phase;
    log.task = task;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (batch[b].task != task) continue;
      ++log.samples;
      for (std::size_t t = 0; t < kNumLossTerms; ++t) {
        log.report.raw[t] += reports[b].raw[t];
        log.report.weighted[t] += reports[b].weighted[t];
        log.report.included[t] = reports[b].included[t];
      }
      log.report.total += reports[b].total;
    }
    if (log.samples == 0) continue;
    for (std::size_t t = 0; t < kNumLossTerms; ++t) {
      log.report.raw[t] /= static_cast<double>(log.samples);
      log.report.weighted[t] /= static_cast<double>(log.samples);
    }
    result.total += log.report.total;
    log.report.total /= static_cast<double>(log.samples);
    result.per_task.push_back(log);
  }
  result.total /= static_cast<double>(batch.size());
  ++global_step_;
  ++phase_step_;
  return result;
}

StepResult Trainer::step(const PhaseSpec& spec) {
  return train_step(sample_batch(dataset_, spec.pair_policy, spec.batch_size, rng_), spec);
}

void Trainer::adam_update(double lr) {
  ++adam_t_;
  const double bias1 = 1.0 - std::pow(config_.adam.beta1, static_cast<double>(adam_t_));
  const double bias2 = 1.0 - std::pow(config_.adam.beta2, static_cast<double>(adam_t_));
  const auto params = model_.trainable_params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    nn::Param<float>& p = *params[i];
    kernels::adam_update<float>(p.size(), p.value.data(), p.grad.data(), m_[i].data(), v_[i].data(),
                                static_cast<float>(lr), static_cast<float>(config_.adam.beta1),
                                static_cast<float>(config_.adam.beta2), static_cast<float>(config_.adam.eps),
                                static_cast<float>(bias1), static_cast<float>(bias2));
  }
}

void Trainer::begin_phase(std::size_t index) {
  if (index == phase_index_) return;
  if (index < phase_index_) throw ConfigError("cannot move the trainer back to an earlier phase");
  phase_index_ = index;
  phase_step_ = 0;
  if (config_.adam.reset_moments_between_phases) {
    for (auto& t : m_) t.fill(0.0f);
    for (auto& t : v_) t.fill(0.0f);
    adam_t_ = 0;
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: manifest.json plus one raw float32 little-endian blob per tensor.

namespace {

constexpr const char* kCheckpointFormat = "facereenact-checkpoint/1";

void write_blob(const fs::path& path, const Tensor<float>& t) {
  std::vector<float> data = t.values();
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : data) f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f)));
  }
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void read_blob(const fs::path& path, Tensor<float>& t) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("checkpoint blob " + path.string() + " is missing");
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != t.size() * sizeof(float)) {
    throw std::runtime_error("checkpoint blob " + path.string() + " has " + std::to_string(bytes) +
                             " bytes, expected " + std::to_string(t.size() * sizeof(float)));
  }
  in.seekg(0);
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(bytes));
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : t.values()) f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f)));
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

}  // namespace

void Trainer::save(const fs::path& dir, const CurriculumSchedule& schedule) {
  // Written beside the target and renamed so a crash never leaves a partial checkpoint.
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  json tensors = json::array();
  const auto params = model_.trainable_params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params[i]->name;
    const std::pair<const char*, const Tensor<float>*> entries[] = {
        {"param", &params[i]->value}, {"adam_m", &m_[i]}, {"adam_v", &v_[i]}};
    for (const auto& [role, t] : entries) {
      const std::string file = std::string(role) + "." + name + ".f32";
      write_blob(tmp / file, *t);
      tensors.push_back({{"name", name}, {"role", role}, {"shape", t->shape()}, {"dtype", "float32"}, {"file", file}});
    }
  }
  json manifest = {{"format", kCheckpointFormat},
                   {"config", to_json(config_)},
                   {"schedule", to_json(schedule)},
                   {"state",
                    {{"global_step", global_step_},
                     {"phase_index", phase_index_},
                     {"phase_step", phase_step_},
                     {"adam_step", adam_t_},
                     {"rng", rng_.state()}}},
                   {"frozen_hash", hex64(model_.frozen_hash())},
                   {"tensors", tensors}};
  {
    std::ofstream out(tmp / "manifest.json");
    out << manifest.dump(1) << '\n';
    if (!out) throw std::runtime_error("cannot write " + (tmp / "manifest.json").string());
  }
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

namespace {

json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no checkpoint manifest in " + dir.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kCheckpointFormat) {
    throw std::runtime_error("unsupported checkpoint format in " + dir.string());
  }
  return manifest;
}

// Restores every tensor of the given roles; returns how many were read.
std::size_t restore_tensors(const fs::path& dir, const json& manifest, Reenactor<float>& model,
                            std::vector<Tensor<float>>* m, std::vector<Tensor<float>>* v) {
  if (manifest.at("frozen_hash").get<std::string>() != hex64(model.frozen_hash())) {
    throw ConfigError("checkpoint " + dir.string() + " does not match the frozen modules of this build");
  }
  const auto params = model.trainable_params();
  std::size_t restored = 0;
  for (const json& t : manifest.at("tensors")) {
    const std::string name = t.at("name"), role = t.at("role");
    if (role != "param" && !m) continue;
    std::size_t i = 0;
    while (i < params.size() && params[i]->name != name) ++i;
    if (i == params.size()) throw ConfigError("checkpoint tensor '" + name + "' is not a trainable parameter");
    Tensor<float>* dst = nullptr;
    if (role == "param") dst = &params[i]->value;
    else if (role == "adam_m") dst = &(*m)[i];
    else if (role == "adam_v") dst = &(*v)[i];
    else throw std::runtime_error("checkpoint tensor '" + name + "' has unknown role '" + role + "'");
    if (t.at("shape").get<Shape>() != dst->shape()) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_string(t.at("shape").get<Shape>()) +
                       ", expected " + shape_string(dst->shape()));
    }
    read_blob(dir / t.at("file").get<std::string>(), *dst);
    ++restored;
  }
  const std::size_t expected = (m ? 3 : 1) * params.size();
  if (restored != expected) throw std::runtime_error("checkpoint " + dir.string() + " is missing tensors");
  return restored;
}

}  // namespace

CurriculumSchedule Trainer::load(const fs::path& dir) {
  const json manifest = read_manifest(dir);
  if (manifest.at("config") != to_json(config_)) {
    throw ConfigError("checkpoint " + dir.string() + " was written with a different configuration");
  }
  restore_tensors(dir, manifest, model_, &m_, &v_);
  const json& s = manifest.at("state");
  global_step_ = s.at("global_step");
  phase_index_ = s.at("phase_index");
  phase_step_ = s.at("phase_step");
  adam_t_ = s.at("adam_step");
  rng_.set_state(s.at("rng").get<std::string>());
  return schedule_from_json(manifest.at("schedule"));
}

CheckpointInfo read_checkpoint_info(const fs::path& dir) {
  const json manifest = read_manifest(dir);
  CheckpointInfo info;
  info.config = trainer_config_from_json(manifest.at("config"));
  info.schedule = schedule_from_json(manifest.at("schedule"));
  info.global_step = manifest.at("state").at("global_step");
  return info;
}

void load_parameters(const fs::path& dir, Reenactor<float>& model) {
  restore_tensors(dir, read_manifest(dir), model, nullptr, nullptr);
}

// ---------------------------------------------------------------------------

std::string train_log_header() {
  std::string h = "step\tphase\ttask\tsamples";
  for (const char* kind : {"raw", "weighted"}) {
    for (std::size_t t = 0; t < kNumLossTerms; ++t) {
      h += std::string("\t") + kind + "_" + loss_term_name(static_cast<LossTerm>(t));
    }
  }
  return h + "\ttotal";
}

std::string train_log_row(const StepLog& log) {
  std::ostringstream os;
  os.precision(17);
  os << log.step << '\t' << phase_number(log.phase) << '\t' << task_name(log.task) << '\t' << log.samples;
  for (double v : log.report.raw) os << '\t' << v;
  for (double v : log.report.weighted) os << '\t' << v;
  os << '\t' << log.report.total;
  return os.str();
}

namespace {

// Opens a phase log for appending, dropping rows at or after first_step so a
// resumed run continues the log exactly where its checkpoint left off.
std::ofstream open_phase_log(const fs::path& path, std::size_t first_step, bool fresh) {
  std::vector<std::string> keep;
  if (!fresh && fs::exists(path)) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (std::stoull(line.substr(0, line.find('\t'))) < first_step) keep.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  out << train_log_header() << '\n';
  for (const auto& l : keep) out << l << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

fs::path run_curriculum(Trainer& trainer, const CurriculumSchedule& schedule, const fs::path& out_dir,
                        std::size_t checkpoint_every, const StepCallback& on_step) {
  schedule.validate();
  fs::create_directories(out_dir);
  if (schedule.phases.empty()) {
    const fs::path ckpt = out_dir / "checkpoint_initial";
    trainer.save(ckpt, schedule);
    return ckpt;
  }
  fs::path last;
  for (std::size_t k = trainer.phase_index(); k < schedule.phases.size(); ++k) {
    trainer.begin_phase(k);
    const PhaseSpec& spec = schedule.phases[k];
    const std::string tag = "phase" + std::to_string(phase_number(spec.phase));
    std::ofstream log = open_phase_log(out_dir / (tag + "_log.tsv"), trainer.global_step(), trainer.phase_step() == 0);
    while (trainer.phase_step() < spec.steps) {
      const StepResult r = trainer.step(spec);
      for (const StepLog& l : r.per_task) log << train_log_row(l) << '\n';
      log.flush();
      if (on_step) on_step(r);
      if (checkpoint_every && trainer.global_step() % checkpoint_every == 0) {
        trainer.save(out_dir / "checkpoint_latest", schedule);
      }
    }
    last = out_dir / ("checkpoint_" + tag);
    trainer.save(last, schedule);
  }
  return last;
}

}  // namespace facereenact
