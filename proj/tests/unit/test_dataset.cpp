#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "facereenact/arch.hpp"
#include "facereenact/dataset.hpp"
#include "temp_dir.hpp"

using namespace facereenact;
using facereenact::testing::TempDir;
namespace fs = std::filesystem;

TEST_CASE("synthetic dataset construction") {
  const FrameDataset ds = generate_synthetic_dataset(10, 20, 32, 7);
  CHECK(ds.identities.size() == 10);
  CHECK(ds.num_frames() == 200);
  for (const auto& id : ds.identities) {
    for (const auto& f : id.frames) {
      REQUIRE(f.pose.has_value());
      CHECK(f.pose->expression.size() == kDefaultExpressionDim);
      CHECK(f.image.shape() == Shape{3, 32, 32});
    }
  }
  const FrameDataset again = generate_synthetic_dataset(10, 20, 32, 7);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 20; ++j) CHECK(ds.frame(i, j).image == again.frame(i, j).image);
  CHECK(!(generate_synthetic_dataset(1, 1, 32, 8).frame(0, 0).image == ds.frame(0, 0).image));
  CHECK_THROWS_AS(generate_synthetic_dataset(0, 3, 32, 1), ConfigError);
}

TEST_CASE("two identities at the same pose render differently") {
  const FrameDataset ds = generate_synthetic_dataset(2, 1, 32, 3);
  Rng r0(derive_seed(3, 0)), r1(derive_seed(3, 1));
  const FaceIdentity a = FaceIdentity::sample(r0), b = FaceIdentity::sample(r1);
  const ExpressionBasis basis;
  const PoseParams& p = *ds.frame(0, 0).pose;
  CHECK(max_abs_diff(render_face(a, p, basis, 32), render_face(b, p, basis, 32)) > 0.05f);
}

TEST_CASE("png round trip is exact for quantized frames") {
  TempDir dir("png");
  const FrameDataset ds = generate_synthetic_dataset(1, 2, 16, 5);
  write_png(dir.path / "x.png", ds.frame(0, 1).image);
  CHECK(read_png(dir.path / "x.png") == ds.frame(0, 1).image);
  CHECK_THROWS_AS(read_png(dir.path / "missing.png"), DatasetError);
}

TEST_CASE("write and ingest preserve frames, order and pose metadata") {
  TempDir dir("ingest");
  const FrameDataset ds = generate_synthetic_dataset(2, 3, 16, 9);
  write_dataset(ds, dir.path);
  const FrameDataset back = ingest(dir.path);
  REQUIRE(back.identities.size() == 2);
  CHECK(back.num_frames() == 6);
  CHECK(back.resolution == 16);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.identities[i].id == ds.identities[i].id);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(back.frame(i, j).name == ds.frame(i, j).name);
      CHECK(back.frame(i, j).image == ds.frame(i, j).image);
      CHECK(back.frame(i, j).pose == ds.frame(i, j).pose);
    }
  }
  const FrameDataset twice = ingest(dir.path);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(twice.frame(i, j).name == back.frame(i, j).name);

  PoseOracle oracle;
  back.register_poses(oracle);
  CHECK(oracle.lookup(back.frame(1, 2).image) == ds.frame(1, 2).pose);
}

TEST_CASE("ingest rejects empty and inconsistent directories") {
  TempDir empty("empty");
  CHECK_THROWS_AS(ingest(empty.path), DatasetError);
  CHECK_THROWS_AS(ingest(empty.path / "nope"), DatasetError);

  TempDir mixed("mixed");
  fs::create_directories(mixed.path / "a");
  write_png(mixed.path / "a" / "f0.png", Tensor<float>({3, 16, 16}));
  write_png(mixed.path / "a" / "f1.png", Tensor<float>({3, 8, 8}));
  CHECK_THROWS_AS(ingest(mixed.path), DatasetError);

  TempDir broken("broken");
  fs::create_directories(broken.path / "a");
  std::ofstream(broken.path / "a" / "f0.png") << "not a png";
  CHECK_THROWS_AS(ingest(broken.path), DatasetError);
}
