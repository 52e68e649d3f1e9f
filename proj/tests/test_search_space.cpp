#include <doctest.h>

#include <algorithm>

#include "helpers.hpp"
#include "ofb/bimask.hpp"
#include "ofb/search_space.hpp"

using namespace ofb;

namespace {

const SubmoduleState& find(const SearchSpace& s, SubmoduleKind k, int layer) {
  return s.submodules[s.index_of(k, layer)];
}

}  // namespace

TEST_CASE("toy grids") {
  const SearchSpace space = build_space(ToyViTConfig{}, SpaceConfig{}, 1);
  REQUIRE(space.size() == 7);

  // qkv units are channel indices within a head; across 4 heads the widths
  // are 8, 12, ..., 32
  const auto& qkv = find(space, SubmoduleKind::QkvChannels, 0);
  CHECK(qkv.spec.candidates() == 7);
  std::vector<std::size_t> total;
  for (auto c : qkv.spec.grid) total.push_back(4 * c);
  CHECK(total == std::vector<std::size_t>{8, 12, 16, 20, 24, 28, 32});
  CHECK(4 * qkv.spec.unit_step() == 4);

  const auto& heads = find(space, SubmoduleKind::HeadCount, 1);
  CHECK(heads.spec.grid == std::vector<std::size_t>{1, 3, 4});

  const auto& pe = find(space, SubmoduleKind::PatchEmbedChannels, -1);
  CHECK(pe.spec.unit_step() == 1);
  CHECK(pe.spec.candidates() == 17);

  const auto& mlp = find(space, SubmoduleKind::MlpChannels, 0);
  CHECK(mlp.spec.grid.front() == 16);
  CHECK(mlp.spec.grid.back() == 64);
  for (const auto& s : space.submodules) {
    CHECK(s.alpha.numel() == s.d_live());
    CHECK(s.importance.numel() == s.spec.full_width);
    CHECK_NOTHROW(s.check());
  }
}

TEST_CASE("indivisible grids are rejected") {
  SpaceConfig cfg;
  cfg.mlp.step = 0.3;
  CHECK_THROWS_AS(build_space(ToyViTConfig{}, cfg, 1), ConfigError);
}

TEST_CASE("build is deterministic in the seed") {
  const auto a = build_space(ToyViTConfig{}, SpaceConfig{}, 5);
  const auto b = build_space(ToyViTConfig{}, SpaceConfig{}, 5);
  const auto c = build_space(ToyViTConfig{}, SpaceConfig{}, 6);
  CHECK(testing::values(a.submodules[3].alpha) == testing::values(b.submodules[3].alpha));
  CHECK(testing::values(a.submodules[3].alpha) != testing::values(c.submodules[3].alpha));
}

TEST_CASE("prune_steps") {
  // importance rises with the unit id, so low ids are the least important
  std::vector<double> imp(16);
  for (std::size_t i = 0; i < 16; ++i) imp[i] = static_cast<double>(i);

  SUBCASE("removing a lower step keeps the width") {
    auto st = testing::make_state({4, 8, 12, 16}, {0, 0, 0, 0}, imp);
    const auto removed = prune_steps(st, {0});
    CHECK(st.d_live() == 3);
    CHECK(removed.empty());
    CHECK(st.w_live() == 16);
    CHECK(st.live_grid() == std::vector<std::size_t>{8, 12, 16});
  }
  SUBCASE("removing the top steps drops the lowest-ranked units") {
    auto st = testing::make_state({4, 8, 12, 16}, {0, 0, 0, 0}, imp);
    const auto removed = prune_steps(st, {2, 3});
    CHECK(st.d_live() == 2);
    CHECK(st.w_live() == 8);
    CHECK(removed == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(st.live_unit_ids == std::vector<std::size_t>{8, 9, 10, 11, 12, 13, 14, 15});
    CHECK(st.alpha.numel() == 2);
    CHECK(st.importance.numel() == 8);
    CHECK(st.importance[0] == 8.0);
  }
  SUBCASE("qkv with seven steps, two top steps removed") {
    SearchSpace space = build_space(ToyViTConfig{}, SpaceConfig{}, 2);
    auto& qkv = space.submodules[space.index_of(SubmoduleKind::QkvChannels, 0)];
    const std::size_t before = qkv.w_live();
    prune_steps(qkv, {5, 6});
    // 2 units per head, 4 heads: 8 channels in total
    CHECK(4 * (before - qkv.w_live()) == 8);
  }
  SUBCASE("the last step cannot be removed") {
    auto st = testing::make_state({16}, {0}, imp);
    CHECK_THROWS_AS(prune_steps(st, {0}), StateError);
    auto st2 = testing::make_state({4, 16}, {0, 0}, imp);
    CHECK_THROWS_AS(prune_steps(st2, {0, 1}), StateError);
  }
}

TEST_CASE("recorded prunes replay exactly") {
  std::vector<double> imp = testing::random_vector(16, 3);
  auto a = testing::make_state({4, 8, 12, 16}, {0, 0, 0, 0}, imp);
  auto b = a;
  const auto removed = prune_steps(a, {3});
  apply_recorded_prune(b, {3}, removed);
  CHECK(a.live_unit_ids == b.live_unit_ids);
  CHECK(testing::values(a.importance) == testing::values(b.importance));
  auto c = testing::make_state({4, 8, 12, 16}, {0, 0, 0, 0}, imp);
  CHECK_THROWS(apply_recorded_prune(c, {3}, {0, 1, 2}));
}

TEST_CASE("architecture export") {
  const SearchSpace space = build_space(ToyViTConfig{}, SpaceConfig{}, 1);
  const auto arch = export_architecture(space);
  const auto full = full_architecture(ToyViTConfig{}, SpaceConfig{});
  REQUIRE(arch.submodules.size() == full.submodules.size());
  for (std::size_t i = 0; i < arch.submodules.size(); ++i) {
    CHECK(arch.submodules[i].kept_units == full.submodules[i].kept_units);
  }
  CHECK(arch.find(SubmoduleKind::HeadCount, 0).kept_units.size() == 4);
}
