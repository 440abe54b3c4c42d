#pragma once

// Three-phase curriculum: inversion (source == target), self-reenactment
// (same identity, different frames), then mixed self/cross batches.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "facereenact/dataset.hpp"
#include "facereenact/losses.hpp"
#include "facereenact/model.hpp"

namespace facereenact {

enum class PhaseTag { Inversion = 1, Self = 2, Mixed = 3 };
enum class PairPolicy { SameFrame, SameIdentity, HalfSelfHalfCross };

int phase_number(PhaseTag p);
PhaseTag phase_from_number(int n);
const char* pair_policy_name(PairPolicy p);
PairPolicy parse_pair_policy(const std::string& name);
PairPolicy default_pair_policy(PhaseTag p);

class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(std::size_t step, std::string term, std::size_t batch_index);
  std::size_t step, batch_index;
  std::string term;
};

struct PhaseSpec {
  PhaseTag phase = PhaseTag::Inversion;
  double learning_rate = 2e-4;
  std::size_t batch_size = 16;
  std::size_t steps = 0;
  PairPolicy pair_policy = PairPolicy::SameFrame;

  /// Learning rate, batch and pair policy for the tag, with the given length.
  static PhaseSpec defaults(PhaseTag phase, std::size_t steps);
  friend bool operator==(const PhaseSpec&, const PhaseSpec&) = default;
};

struct CurriculumSchedule {
  std::vector<PhaseSpec> phases;

  static CurriculumSchedule standard(std::size_t steps1 = 2000, std::size_t steps2 = 2000,
                                     std::size_t steps3 = 1000);
  /// Phases strictly increasing (subsets allowed), positive batch sizes.
  void validate() const;
  friend bool operator==(const CurriculumSchedule&, const CurriculumSchedule&) = default;
};

struct TrainPair {
  std::size_t source_identity = 0, source_frame = 0;
  std::size_t target_identity = 0, target_frame = 0;
  Task task = Task::Inversion;
  friend bool operator==(const TrainPair&, const TrainPair&) = default;
};

/// Inversion pairs for SameFrame, Self pairs for SameIdentity, and for
/// HalfSelfHalfCross ceil(B/2) Self pairs followed by floor(B/2) Cross pairs.
std::vector<TrainPair> sample_batch(const FrameDataset& dataset, PairPolicy policy,
                                    std::size_t batch_size, Rng& rng);

struct AdamConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  bool reset_moments_between_phases = false;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct TrainerConfig {
  ModelConfig model;
  LossOptions loss;
  AdamConfig adam;
  std::uint64_t seed = 1;
};

struct StepLog {
  std::size_t step = 0;  // global, counted from 0
  PhaseTag phase = PhaseTag::Inversion;
  Task task = Task::Inversion;
  std::size_t samples = 0;
  LossReport report;  // mean over the samples of this task
};

struct StepResult {
  double total = 0;                 // batch objective, mean over samples
  std::vector<StepLog> per_task;    // one entry per task present, in Task order
};

/// Mutable training state: model, optimizer moments, counters and the
/// sampling RNG. Only fusion and hypernet parameters are ever written.
class Trainer {
 public:
  Trainer(TrainerConfig config, const FrameDataset& dataset);

  const TrainerConfig& config() const { return config_; }
  Reenactor<float>& model() { return model_; }
  const Reenactor<float>& model() const { return model_; }
  const FrameDataset& dataset() const { return dataset_; }
  Rng& rng() { return rng_; }

  std::size_t global_step() const { return global_step_; }
  std::size_t phase_index() const { return phase_index_; }
  std::size_t phase_step() const { return phase_step_; }
  std::size_t adam_step() const { return adam_t_; }

  /// Forward, objective, backward and one Adam update over the batch.
  /// Advances the global and phase step counters.
  StepResult train_step(const std::vector<TrainPair>& batch, const PhaseSpec& spec);

  /// Draws the next batch for the spec and trains on it.
  StepResult step(const PhaseSpec& spec);

  /// Moves the counters to the start of a later phase, resetting the Adam
  /// moments when configured to.
  void begin_phase(std::size_t phase_index);

  void save(const std::filesystem::path& dir, const CurriculumSchedule& schedule);
  /// Restores parameters, moments, counters and RNG. Returns the schedule stored
  /// with the checkpoint. Throws if the checkpoint was made with another config.
  CurriculumSchedule load(const std::filesystem::path& dir);

 private:
  void adam_update(double lr);

  TrainerConfig config_;
  const FrameDataset& dataset_;
  Reenactor<float> model_;
  Rng rng_;
  std::vector<Tensor<float>> m_, v_;
  std::size_t global_step_ = 0, phase_index_ = 0, phase_step_ = 0, adam_t_ = 0;
};

struct CheckpointInfo {
  TrainerConfig config;
  CurriculumSchedule schedule;
  std::size_t global_step = 0;
};

/// Configuration, schedule and step stored in a checkpoint manifest.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir);

/// Loads only the trainable parameters, for inference. The model must have
/// been built from the checkpoint's model configuration.
void load_parameters(const std::filesystem::path& dir, Reenactor<float>& model);

using StepCallback = std::function<void(const StepResult&)>;

/// Runs the remaining steps of every phase from the trainer's current position.
/// Writes <out>/phase<N>_log.tsv and <out>/checkpoint_phase<N>/ per phase, and
/// <out>/checkpoint_latest/ every checkpoint_every steps when that is nonzero.
/// Returns the last checkpoint written; an empty schedule writes
/// <out>/checkpoint_initial/.
std::filesystem::path run_curriculum(Trainer& trainer, const CurriculumSchedule& schedule,
                                     const std::filesystem::path& out_dir,
                                     std::size_t checkpoint_every = 0,
                                     const StepCallback& on_step = {});

/// Tab-separated training log.
std::string train_log_header();
std::string train_log_row(const StepLog& log);

}  // namespace facereenact
