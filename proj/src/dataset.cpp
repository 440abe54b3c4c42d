#include "facereenact/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "facereenact/arch.hpp"
#include "json.hpp"

namespace facereenact {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t FrameDataset::num_frames() const {
  std::size_t n = 0;
  for (const auto& id : identities) n += id.frames.size();
  return n;
}

void FrameDataset::validate() const {
  if (identities.empty()) throw DatasetError("dataset has no identities");
  std::set<std::string> ids;
  for (const auto& id : identities) {
    if (!ids.insert(id.id).second) throw DatasetError("duplicate identity id '" + id.id + "'");
    if (id.frames.empty()) throw DatasetError("identity '" + id.id + "' has no frames");
    for (const auto& f : id.frames) {
      if (f.image.shape() != Shape{3, resolution, resolution}) {
        throw DatasetError("frame " + id.id + "/" + f.name + " has shape " + shape_string(f.image.shape()) +
                           ", expected " + std::to_string(resolution) + "x" + std::to_string(resolution));
      }
    }
  }
}

void FrameDataset::register_poses(PoseOracle& oracle) const {
  for (const auto& id : identities) {
    for (const auto& f : id.frames) {
      if (f.pose) oracle.add(f.image, *f.pose);
    }
  }
}

FrameDataset generate_synthetic_dataset(std::size_t num_ids, std::size_t frames_per_id,
                                        std::size_t resolution, std::uint64_t seed,
                                        std::size_t expression_dim, const SyntheticPoseRanges& r) {
  if (num_ids == 0 || frames_per_id == 0 || resolution < 8) {
    throw ConfigError("synthetic dataset needs positive counts and resolution >= 8");
  }
  const ExpressionBasis basis(expression_dim);
  FrameDataset ds;
  ds.resolution = resolution;
  char buf[32];
  for (std::size_t i = 0; i < num_ids; ++i) {
    Rng rng(derive_seed(seed, i));
    Identity ident;
    std::snprintf(buf, sizeof buf, "id_%03zu", i);
    ident.id = buf;
    const FaceIdentity face = FaceIdentity::sample(rng);
    for (std::size_t j = 0; j < frames_per_id; ++j) {
      PoseParams p;
      p.euler = {rng.uniform(-r.yaw, r.yaw), rng.uniform(-r.pitch, r.pitch), rng.uniform(-r.roll, r.roll)};
      p.expression = basis.lift({rng.uniform(-r.mouth_width, r.mouth_width),
                                 rng.uniform(-r.mouth_height, r.mouth_height)});
      p.shape3d = {face.semi_axis_u, face.semi_axis_v};
      p.gaze = {rng.uniform(-r.gaze, r.gaze), rng.uniform(-r.gaze, r.gaze)};
      Frame f;
      std::snprintf(buf, sizeof buf, "frame_%03zu", j);
      f.name = buf;
      f.image = render_face(face, p, basis, resolution);
      // Stored frames must equal what a PNG round trip gives back.
      quantize_8bit(f.image);
      f.pose = std::move(p);
      ident.frames.push_back(std::move(f));
    }
    ds.identities.push_back(std::move(ident));
  }
  return ds;
}

void write_png(const fs::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("write_png expects [3, H, W]");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<png_byte> rgb(3 * h * w);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < h * w; ++p) {
      const double v = std::clamp(static_cast<double>(image[c * h * w + p]), -1.0, 1.0);
      rgb[p * 3 + c] = static_cast<png_byte>(std::lround((v + 1.0) * 127.5));
    }
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, rgb.data(), 0, nullptr)) {
    throw DatasetError("cannot write " + path.string() + ": " + img.message);
  }
}

Tensor<float> read_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DatasetError("cannot read " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  const std::size_t h = img.height, w = img.width;
  std::vector<png_byte> rgb(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, rgb.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DatasetError("cannot decode " + path.string() + ": " + img.message);
  }
  Tensor<float> out({3, h, w});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < h * w; ++p) {
      out[c * h * w + p] = static_cast<float>(rgb[p * 3 + c] / 127.5 - 1.0);
    }
  }
  return out;
}

namespace {

json pose_to_json(const PoseParams& p) {
  return {{"euler", p.euler}, {"expression", p.expression}, {"shape3d", p.shape3d}, {"gaze", p.gaze}};
}

PoseParams pose_from_json(const json& j) {
  PoseParams p;
  p.euler = j.at("euler").get<std::array<double, 3>>();
  p.expression = j.at("expression").get<std::vector<double>>();
  p.shape3d = j.at("shape3d").get<std::vector<double>>();
  p.gaze = j.at("gaze").get<std::array<double, 2>>();
  return p;
}

constexpr const char* kProvenanceFile = "provenance.json";
constexpr const char* kProvenanceFormat = "facereenact-frames/1";

}  // namespace

void write_dataset(const FrameDataset& dataset, const fs::path& root) {
  dataset.validate();
  fs::create_directories(root);
  json frames = json::object();
  for (const auto& id : dataset.identities) {
    fs::create_directories(root / id.id);
    for (const auto& f : id.frames) {
      write_png(root / id.id / (f.name + ".png"), f.image);
      if (f.pose) frames[id.id + "/" + f.name] = pose_to_json(*f.pose);
    }
  }
  if (frames.empty()) return;
  json doc = {{"format", kProvenanceFormat}, {"resolution", dataset.resolution}, {"frames", frames}};
  std::ofstream out(root / kProvenanceFile);
  out << doc.dump(1) << '\n';
  if (!out) throw DatasetError("cannot write " + (root / kProvenanceFile).string());
}

FrameDataset ingest(const fs::path& root) {
  if (!fs::is_directory(root)) throw DatasetError("dataset path " + root.string() + " is not a directory");
  json provenance;
  if (fs::exists(root / kProvenanceFile)) {
    std::ifstream in(root / kProvenanceFile);
    try {
      in >> provenance;
    } catch (const json::exception& e) {
      throw DatasetError("malformed " + (root / kProvenanceFile).string() + ": " + e.what());
    }
    if (provenance.value("format", "") != kProvenanceFormat) {
      throw DatasetError("unsupported provenance format in " + root.string());
    }
  }
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  FrameDataset ds;
  for (const auto& dir : dirs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    if (files.empty()) continue;
    std::sort(files.begin(), files.end());
    Identity ident;
    ident.id = dir.filename().string();
    for (const auto& file : files) {
      Frame f;
      f.name = file.stem().string();
      f.image = read_png(file);
      if (f.image.dim(1) != f.image.dim(2)) throw DatasetError("frame " + file.string() + " is not square");
      if (ds.resolution == 0) ds.resolution = f.image.dim(1);
      if (f.image.dim(1) != ds.resolution) {
        throw DatasetError("resolution mismatch: " + file.string() + " is " + std::to_string(f.image.dim(1)) +
                           " px, dataset is " + std::to_string(ds.resolution) + " px");
      }
      if (!provenance.is_null()) {
        const auto& frames = provenance.at("frames");
        const auto it = frames.find(ident.id + "/" + f.name);
        if (it != frames.end()) f.pose = pose_from_json(*it);
      }
      ident.frames.push_back(std::move(f));
    }
    ds.identities.push_back(std::move(ident));
  }
  if (ds.identities.empty()) throw DatasetError("no PNG frames found under " + root.string());
  ds.validate();
  return ds;
}

}  // namespace facereenact
