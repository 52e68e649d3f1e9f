#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "ofb/cost_model.hpp"
#include "ofb/io.hpp"
#include "ofb/vit.hpp"

using namespace ofb;
using testing::values;

namespace {

const ToyViTConfig kModel;

std::vector<double> random_patches(std::size_t batch, std::uint64_t seed) {
  return testing::random_vector(batch * kModel.tokens() * kModel.patch_pixels(), seed, -2.0, 2.0);
}

double max_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.numel() == b.numel());
  double d = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) d = std::max(d, std::fabs(a[i] - b[i]));
  return d;
}

SupernetMasks ones() {
  SupernetMasks m;
  m.patch_embed = Tensor::full({kModel.embed_dim}, 1.0);
  for (std::size_t l = 0; l < kModel.depth; ++l) {
    m.layers.push_back({Tensor::full({kModel.head_dim}, 1.0), Tensor::full({kModel.heads}, 1.0),
                        Tensor::full({kModel.mlp_dim}, 1.0)});
  }
  return m;
}

// Random decided architecture: each submodule keeps a random candidate.
SearchSpace random_decided_space(std::uint64_t seed) {
  SearchSpace space = build_space(kModel, SpaceConfig{}, seed);
  std::mt19937_64 rng(seed);
  for (auto& s : space.submodules) {
    const std::size_t keep = rng() % s.d_live();
    std::vector<std::size_t> drop;
    for (std::size_t k = 0; k < s.d_live(); ++k) {
      if (k != keep) drop.push_back(s.live_steps[k]);
    }
    if (!drop.empty()) prune_steps(s, drop);
  }
  return space;
}

}  // namespace

TEST_CASE("all-ones masks are the identity") {
  const auto model = ViTModel::init(ViTArch::full(kModel), 1);
  const auto x = random_patches(3, 2);
  const auto plain = forward(model, x, 3, {});
  const auto masked = forward(model, x, 3, ones());
  CHECK(plain.logits.shape() == Shape{3, 4});
  CHECK(max_diff(plain.logits, masked.logits) < 1e-12);
}

TEST_CASE("forward is deterministic") {
  const auto a = ViTModel::init(ViTArch::full(kModel), 4);
  const auto b = ViTModel::init(ViTArch::full(kModel), 4);
  const auto x = random_patches(2, 3);
  CHECK(values(forward(a, x, 2, {}).logits) == values(forward(b, x, 2, {}).logits));
  const auto c = ViTModel::init(ViTArch::full(kModel), 5);
  CHECK(values(forward(a, x, 2, {}).logits) != values(forward(c, x, 2, {}).logits));
}

TEST_CASE("zeroed mlp units do not matter") {
  auto model = ViTModel::init(ViTArch::full(kModel), 1);
  const auto x = random_patches(2, 7);
  auto masks = ones();
  std::vector<double> m(kModel.mlp_dim, 1.0);
  m[5] = 0.0;
  masks.layers[0].mlp = Tensor::from(m, {kModel.mlp_dim});
  const auto before = forward(model, x, 2, masks).logits;
  // perturb the weights feeding and leaving hidden unit 5
  auto w = model.blocks[0].fc1.weight.mutable_data();
  for (std::size_t i = 0; i < kModel.embed_dim; ++i) w[i * kModel.mlp_dim + 5] += 3.0;
  auto w2 = model.blocks[0].fc2.weight.mutable_data();
  for (std::size_t o = 0; o < kModel.embed_dim; ++o) w2[5 * kModel.embed_dim + o] -= 2.0;
  CHECK(max_diff(before, forward(model, x, 2, masks).logits) < 1e-12);
}

TEST_CASE("reconstruction loss") {
  const auto model = ViTModel::init(ViTArch::full(kModel), 1);
  const auto x = random_patches(2, 8);
  const auto none = forward(model, x, 2, {}, {}, true);
  CHECK(reconstruct_loss(none, x, kModel.patch_pixels()).item() == 0.0);

  std::vector<std::uint8_t> pos(2 * kModel.tokens(), 0);
  pos[3] = pos[70] = 1;
  const auto out = forward(model, x, 2, {}, pos, true);
  REQUIRE(out.masked_rows == std::vector<std::size_t>{3, 70});
  CHECK(out.reconstruction.shape() == Shape{2, kModel.patch_pixels()});
  double oracle = 0.0;
  for (std::size_t r = 0; r < 2; ++r) {
    const std::size_t row = out.masked_rows[r];
    for (std::size_t k = 0; k < kModel.patch_pixels(); ++k) {
      oracle += std::fabs(out.reconstruction[r * kModel.patch_pixels() + k] -
                          x[row * kModel.patch_pixels() + k]);
    }
  }
  oracle /= 2.0 * static_cast<double>(kModel.patch_pixels());
  CHECK(reconstruct_loss(out, x, kModel.patch_pixels()).item() == doctest::Approx(oracle).epsilon(1e-14));

  // masked patches are hidden: changing them leaves the logits unchanged
  auto y = x;
  for (std::size_t k = 0; k < kModel.patch_pixels(); ++k) y[3 * kModel.patch_pixels() + k] += 5.0;
  CHECK(max_diff(out.logits, forward(model, y, 2, {}, pos, true).logits) < 1e-12);
}

TEST_CASE("materialized model matches the hardened supernet") {
  const auto coeffs = calibrate(kModel);
  const auto supernet = ViTModel::init(ViTArch::full(kModel), 3);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SearchSpace space = random_decided_space(seed);
    const auto arch = export_architecture(space);
    const auto pruned = materialize(space, supernet);
    const auto masks = hardened_masks(arch, kModel);
    for (std::uint64_t b = 0; b < 2; ++b) {
      const auto x = random_patches(4, 100 * seed + b);
      CHECK(max_diff(forward(supernet, x, 4, masks).logits, forward(pruned, x, 4, {}).logits) < 1e-9);
    }
    const auto r = discrete_cost(arch, kModel, coeffs);
    CHECK(pruned.parameter_count() == r.params);
    CHECK(model_cost(pruned.arch, coeffs).flops == r.flops);
  }
  const SearchSpace undecided = build_space(kModel, SpaceConfig{}, 1);
  CHECK_THROWS_AS(materialize(undecided, supernet), StateError);
}

TEST_CASE("checkpoint round trip") {
  const auto space = random_decided_space(2);
  const auto model = materialize(space, ViTModel::init(ViTArch::full(kModel), 6));
  const auto dir = std::filesystem::temp_directory_path() / "ofb_ckpt_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(model, dir / "m");
  const auto back = load_checkpoint(dir / "m");
  CHECK(back.arch == model.arch);
  const auto a = model.named_tensors(), b = back.named_tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(values(a[i].second) == values(b[i].second));
  }
  const auto arch = export_architecture(space);
  const auto j = architecture_to_json(arch);
  CHECK(architecture_to_json(architecture_from_json(j)) == j);
  std::filesystem::remove_all(dir);
}
