#include <set>

#include "doctest.h"
#include "grad_check.hpp"
#include "facereenact/generator.hpp"

using namespace facereenact;
using namespace facereenact::testing;

TEST_CASE("canonical table dimensions") {
  const GeneratorArch arch = canonical_arch();
  REQUIRE(arch.layers.size() == 20);
  CHECK(arch.count(LayerKind::Conv) == 13);
  CHECK(arch.count(LayerKind::ToRGB) == 7);
  CHECK(arch.num_styles() == 14);

  const LayerSpec& first = arch.layers[0];
  CHECK(first.name == "Conv1");
  CHECK(first.resolution == 4);
  CHECK(first.kernel_numel() == 512u * 512 * 3 * 3);
  const LayerSpec& last = arch.layers[19];
  CHECK(last.name == "ToRGB7");
  CHECK(last.resolution == 256);
  CHECK((last.out_channels == 3 && last.in_channels == 64 && last.kernel_size == 1));

  // Independent transcription of the per-layer table: name, res, out, in.
  struct Row { const char* name; std::size_t res, out, in; };
  const Row rows[] = {
      {"Conv1", 4, 512, 512},    {"ToRGB1", 4, 3, 512},    {"Conv2", 8, 512, 512},
      {"Conv3", 8, 512, 512},    {"ToRGB2", 8, 3, 512},    {"Conv4", 16, 512, 512},
      {"Conv5", 16, 512, 512},   {"ToRGB3", 16, 3, 512},   {"Conv6", 32, 512, 512},
      {"Conv7", 32, 512, 512},   {"ToRGB4", 32, 3, 512},   {"Conv8", 64, 256, 512},
      {"Conv9", 64, 256, 256},   {"ToRGB5", 64, 3, 256},   {"Conv10", 128, 128, 256},
      {"Conv11", 128, 128, 128}, {"ToRGB6", 128, 3, 128},  {"Conv12", 256, 64, 128},
      {"Conv13", 256, 64, 64},   {"ToRGB7", 256, 3, 64}};
  for (std::size_t i = 0; i < 20; ++i) {
    CAPTURE(i);
    CHECK(arch.layers[i].name == rows[i].name);
    CHECK(arch.layers[i].resolution == rows[i].res);
    CHECK(arch.layers[i].out_channels == rows[i].out);
    CHECK(arch.layers[i].in_channels == rows[i].in);
    CHECK(arch.layers[i].kernel_size == (arch.layers[i].kind == LayerKind::Conv ? 3u : 1u));
  }
  CHECK(arch.controlled_layers() ==
        std::vector<std::size_t>{0, 2, 3, 5, 6, 8, 9, 11, 12, 14, 15, 17, 18});
}

TEST_CASE("scaled tables") {
  CHECK(scaled_arch(256, 512) == canonical_arch());
  const GeneratorArch small = scaled_arch(32, 64);
  // 4x4 block (Conv, ToRGB) plus three doubling blocks of (Conv, Conv, ToRGB).
  CHECK(small.layers.size() == 11);
  CHECK(small.count(LayerKind::Conv) == 7);
  CHECK(small.count(LayerKind::ToRGB) == 4);
  CHECK(small.max_channels() == 64);
  CHECK(small.num_styles() == 8);
  for (std::size_t bad : {7u, 4u, 48u, 512u}) CHECK_THROWS_AS(scaled_arch(bad, 64), ConfigError);
  CHECK_THROWS_AS(scaled_arch(32, 0), ConfigError);
}

TEST_CASE("apply_offsets follows the multiplicative rule and is pure") {
  const GeneratorArch arch = scaled_arch(8, 4);
  Generator<float> gen(arch, {});
  KernelSet<float> base = gen.base_kernels();
  for (auto& k : base) k.fill(2.0f);
  const KernelSet<float> before = base;
  WeightOffsets<float> offsets;
  offsets.entries.emplace(0, Tensor<float>(base[0].shape(), 0.5f));
  offsets.entries.emplace(2, Tensor<float>(base[2].shape(), -1.0f));
  const KernelSet<float> out = apply_offsets(arch, base, offsets);
  CHECK(base == before);
  for (float v : out[0].values()) CHECK(v == 3.0f);
  for (float v : out[2].values()) CHECK(v == 0.0f);
  CHECK(out[1] == base[1]);
  CHECK(out[3] == base[3]);

  WeightOffsets<float> zero;
  for (std::size_t l : arch.controlled_layers()) zero.entries.emplace(l, Tensor<float>(base[l].shape()));
  CHECK(apply_offsets(arch, base, zero) == base);
}

TEST_CASE("offset conformance is enforced") {
  const GeneratorArch arch = scaled_arch(8, 4);
  Generator<float> gen(arch, {});
  WeightOffsets<float> rgb;
  rgb.entries.emplace(1, Tensor<float>(gen.base_kernels()[1].shape()));
  CHECK_THROWS_AS(validate_offsets(arch, rgb), ShapeError);
  CHECK_THROWS_AS(apply_offsets(arch, gen.base_kernels(), rgb), ShapeError);

  WeightOffsets<float> wrong_shape;
  wrong_shape.entries.emplace(0, Tensor<float>({4, 4, 1, 1}));
  CHECK_THROWS_AS(apply_offsets(arch, gen.base_kernels(), wrong_shape), ShapeError);

  WeightOffsets<float> not_repeated;
  Tensor<float> t(gen.base_kernels()[0].shape());
  t[4] = 1.0f;
  not_repeated.entries.emplace(0, t);
  CHECK_THROWS_AS(validate_offsets(arch, not_repeated), ShapeError);
}

TEST_CASE("synthesis is deterministic, bounded and shaped by the table") {
  const GeneratorArch arch = scaled_arch(32, 64);
  Generator<float> gen(arch, {});
  Rng rng(2);
  const LatentCode<float> w = gen.sample_latent(rng);
  CHECK(w.rows() == arch.num_styles());
  const auto a = gen.synthesize(gen.base_kernels(), w);
  const auto b = gen.synthesize(gen.base_kernels(), w);
  CHECK(a.shape() == Shape{3, 32, 32});
  CHECK(a == b);
  CHECK(a.all_finite());
  for (float v : a.values()) CHECK((v >= -1.0f && v <= 1.0f));

  LatentCode<float> bad{Tensor<float>({3, kLatentDim})};
  CHECK_THROWS_AS(gen.synthesize(gen.base_kernels(), bad), ShapeError);
}

TEST_CASE("noise flag changes output only when enabled") {
  const GeneratorArch arch = scaled_arch(16, 8);
  GeneratorConfig noisy;
  noisy.noise = true;
  Generator<double> plain(arch, {}), with_noise(arch, noisy);
  Rng rng(1);
  const auto w = plain.sample_latent(rng);
  CHECK(plain.synthesize(plain.base_kernels(), w) != with_noise.synthesize(with_noise.base_kernels(), w));
  CHECK(with_noise.synthesize(with_noise.base_kernels(), w) ==
        with_noise.synthesize(with_noise.base_kernels(), w));
}

TEST_CASE("perturbing one layer's offset leaves every earlier activation untouched") {
  const GeneratorArch arch = scaled_arch(32, 16);
  Generator<float> gen(arch, {});
  Rng rng(8);
  const auto w = gen.sample_latent(rng);
  for (std::size_t target : arch.controlled_layers()) {
    CAPTURE(target);
    WeightOffsets<float> offsets;
    Tensor<float> delta(gen.base_kernels()[target].shape(), 0.3f);
    offsets.entries.emplace(target, delta);
    SynthesisTape<float> base_tape, moved_tape;
    gen.synthesize(gen.base_kernels(), w, &base_tape);
    gen.synthesize(apply_offsets(arch, gen.base_kernels(), offsets), w, &moved_tape);
    for (std::size_t l = 0; l < target; ++l) {
      CHECK(base_tape.layers[l].activation == moved_tape.layers[l].activation);
    }
    CHECK(base_tape.layers[target].activation != moved_tape.layers[target].activation);
  }
}

TEST_CASE("kernel gradients match central differences") {
  const GeneratorArch arch = scaled_arch(16, 4);
  GeneratorConfig cfg;
  cfg.noise = true;
  Generator<double> gen(arch, cfg);
  Rng rng(12);
  const auto w = gen.sample_latent(rng);
  KernelSet<double> kernels = gen.base_kernels();
  SynthesisTape<double> tape;
  const auto image = gen.synthesize(kernels, w, &tape);
  const auto probe = random_tensor(image.shape(), rng);
  const auto controlled = arch.controlled_layers();
  const auto grads = gen.backward_kernels(tape, probe, controlled);
  REQUIRE(grads.size() == controlled.size());
  auto loss = [&] { return inner(gen.synthesize(kernels, w), probe); };
  for (std::size_t l : controlled) {
    CAPTURE(l);
    auto& k = kernels[l].values();
    for (std::size_t i = 0; i < k.size(); i += 11) {
      CHECK(rel_err(central_difference(k, i, loss), grads.at(l)[i]) < 1e-5);
    }
  }
  // Requesting a subset gives the same numbers for that subset.
  const auto partial = gen.backward_kernels(tape, probe, {controlled[3]});
  CHECK(partial.size() == 1);
  CHECK(max_abs_diff(partial.at(controlled[3]), grads.at(controlled[3])) < 1e-12);
  CHECK_THROWS_AS(gen.backward_kernels(tape, probe, {1}), ShapeError);
}
