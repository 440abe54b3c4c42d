#pragma once

// Frame datasets: per-identity ordered frames, optional ground-truth pose
// metadata, PNG storage and a deterministic synthetic generator.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "facereenact/face_model.hpp"
#include "facereenact/tensor.hpp"

namespace facereenact {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Frame {
  std::string name;  // file stem, e.g. "frame_003"
  Tensor<float> image;
  std::optional<PoseParams> pose;  // generating parameters of synthetic frames
};

struct Identity {
  std::string id;
  std::vector<Frame> frames;
};

struct FrameDataset {
  std::vector<Identity> identities;
  std::size_t resolution = 0;

  std::size_t num_frames() const;
  const Frame& frame(std::size_t identity, std::size_t index) const {
    return identities.at(identity).frames.at(index);
  }
  /// Throws DatasetError on duplicate ids, empty identities or mixed resolutions.
  void validate() const;
  /// Registers every frame with known pose in the oracle.
  void register_poses(PoseOracle& oracle) const;
};

struct SyntheticPoseRanges {
  double yaw = 35, pitch = 20, roll = 15;  // degrees, symmetric
  double gaze = 0.3;                       // radians
  double mouth_width = 0.3, mouth_height = 0.4;  // log-extent ranges
};

FrameDataset generate_synthetic_dataset(std::size_t num_ids, std::size_t frames_per_id,
                                        std::size_t resolution, std::uint64_t seed,
                                        std::size_t expression_dim = kDefaultExpressionDim,
                                        const SyntheticPoseRanges& ranges = {});

/// 8-bit RGB PNG; values are mapped from [-1, 1].
void write_png(const std::filesystem::path& path, const Tensor<float>& image);
Tensor<float> read_png(const std::filesystem::path& path);

/// One subdirectory per identity with PNG frames, plus provenance.json when
/// pose metadata is known.
void write_dataset(const FrameDataset& dataset, const std::filesystem::path& root);
/// Lexicographic identity and frame order. Reads provenance.json when present.
FrameDataset ingest(const std::filesystem::path& root);

}  // namespace facereenact
