#pragma once

// JSON run configuration. Every object has a closed key set: unknown keys are
// rejected and missing keys keep their defaults. Schema in README.md.

#include <filesystem>
#include <optional>
#include <string>

#include "facereenact/trainer.hpp"
#include "json.hpp"

namespace facereenact {

struct SyntheticDatasetSpec {
  std::size_t identities = 10;
  std::size_t frames_per_identity = 20;
  std::size_t resolution = 32;
  std::uint64_t seed = 7;
  friend bool operator==(const SyntheticDatasetSpec&, const SyntheticDatasetSpec&) = default;
};

/// Either a directory to ingest or a synthetic dataset built in memory.
struct DatasetSpec {
  std::optional<std::filesystem::path> path;
  std::optional<SyntheticDatasetSpec> synthetic;

  FrameDataset load(std::size_t expression_dim) const;
};

struct RunConfig {
  TrainerConfig trainer;
  CurriculumSchedule schedule = CurriculumSchedule::standard();
  DatasetSpec dataset;
  std::filesystem::path output_dir = "runs/default";
  std::size_t checkpoint_every = 0;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainerConfig& c);
nlohmann::json to_json(const CurriculumSchedule& s);
nlohmann::json to_json(const RunConfig& c);

ModelConfig model_config_from_json(const nlohmann::json& j);
TrainerConfig trainer_config_from_json(const nlohmann::json& j);
CurriculumSchedule schedule_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Parses and validates. Throws ConfigError naming the offending key.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace facereenact
