#include <doctest.h>

#include "helpers.hpp"
#include "ofb/pruner.hpp"

using namespace ofb;

namespace {

SearchSpace single(std::vector<double> p, std::vector<std::size_t> grid) {
  SearchSpace space;
  const std::size_t full = grid.back();
  space.submodules.push_back(
      testing::make_state(std::move(grid), testing::log_of(p), testing::random_vector(full, 5)));
  return space;
}

}  // namespace

TEST_CASE("trigger examples") {
  const PruneSchedule sched{1, 0.2, 0, false};

  SUBCASE("one low step") {
    auto space = single({0.04, 0.30, 0.33, 0.33}, {2, 4, 6, 8});
    const auto ev = maybe_prune(space, sched, 3);
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].removed_steps == std::vector<std::size_t>{0});
    CHECK(ev[0].threshold == doctest::Approx(0.05));
    CHECK(ev[0].p_min == doctest::Approx(0.04));
    CHECK(ev[0].step == 3);
    CHECK(space.submodules[0].d_live() == 3);
    CHECK(space.submodules[0].w_live() == 8);
  }
  SUBCASE("uniform") {
    auto space = single({0.25, 0.25, 0.25, 0.25}, {2, 4, 6, 8});
    CHECK(maybe_prune(space, sched, 3).empty());
  }
  SUBCASE("two low steps in one event") {
    auto space = single({0.01, 0.01, 0.98}, {2, 4, 6});
    const auto ev = maybe_prune(space, sched, 0);
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].removed_steps == std::vector<std::size_t>{0, 1});
    CHECK(space.submodules[0].d_live() == 1);
  }
  SUBCASE("low top steps drop the lowest-importance units") {
    auto space = single({0.98, 0.01, 0.01}, {2, 4, 6});
    const auto imp = testing::values(space.submodules[0].importance);
    const auto ev = maybe_prune(space, sched, 0);
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].removed_unit_ids.size() == 4);
    const auto& st = space.submodules[0];
    double kept_min = 1e9, removed_max = -1e9;
    for (auto u : st.live_unit_ids) kept_min = std::min(kept_min, imp[u]);
    for (auto u : ev[0].removed_unit_ids) removed_max = std::max(removed_max, imp[u]);
    CHECK(removed_max <= kept_min);
  }
}

TEST_CASE("trigger timing") {
  auto space = single({0.01, 0.01, 0.98}, {2, 4, 6});
  const PruneSchedule sched{5, 0.2, 20, false};
  CHECK(maybe_prune(space, sched, 10).empty());
  CHECK(maybe_prune(space, sched, 21).empty());
  PruneSchedule done = sched;
  done.finished = true;
  CHECK(maybe_prune(space, done, 25).empty());
  CHECK(maybe_prune(space, sched, 25).size() == 1);
  PruneSchedule bad{0, 0.2, 0, false};
  auto other = single({0.01, 0.01, 0.98}, {2, 4, 6});
  CHECK_THROWS_AS(maybe_prune(other, bad, 1), ConfigError);
}

TEST_CASE("finish check") {
  auto decided = single({1.0}, {6});
  CHECK(finish_check(decided, 0.4, 0.5));
  CHECK_FALSE(finish_check(decided, 1.0, 0.5));
  CHECK(finish_check(decided, 0.54, 0.5));
  CHECK_FALSE(finish_check(decided, 0.56, 0.5));
  CHECK(finish_check(decided, 0.52, 0.5, 0.05));
  CHECK_FALSE(finish_check(decided, 0.53, 0.5, 0.05));
  auto near = single({0.9995, 0.0005}, {3, 6});
  CHECK(finish_check(near, 0.4, 0.5));
  auto soft = single({0.99, 0.01}, {3, 6});
  CHECK_FALSE(finish_check(soft, 0.4, 0.5));
}

TEST_CASE("harden collapses to the most probable step") {
  auto space = single({0.2, 0.5, 0.3}, {2, 4, 6});
  const auto ev = harden(space, 9);
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].reason == "finish");
  CHECK(space.submodules[0].live_steps == std::vector<std::size_t>{1});
  CHECK(space.submodules[0].w_live() == 4);
  CHECK(harden(space, 10).empty());
}

TEST_CASE("events replay and round-trip through json") {
  SearchSpace space = build_space(ToyViTConfig{}, SpaceConfig{}, 3);
  const SearchSpace fresh = space;
  std::vector<PruneEvent> log;
  std::mt19937_64 rng(1);
  for (std::size_t t = 0; t < 6; ++t) {
    for (auto& s : space.submodules) {
      auto a = testing::values(s.alpha);
      a[rng() % a.size()] -= 3.0;
      s.alpha = Tensor::from(a, {a.size()});
    }
    for (auto& e : maybe_prune(space, {1, 0.2, 0, false}, t)) log.push_back(e);
  }
  for (auto& e : harden(space, 6)) log.push_back(e);
  REQUIRE(!log.empty());

  std::vector<PruneEvent> parsed;
  for (const auto& e : log) {
    const auto back = PruneEvent::from_json(nlohmann::json::parse(e.to_json().dump()));
    CHECK(back.to_json() == e.to_json());
    parsed.push_back(back);
  }
  SearchSpace replayed = fresh;
  replay(replayed, parsed);
  const auto a = export_architecture(space), b = export_architecture(replayed);
  for (std::size_t i = 0; i < a.submodules.size(); ++i) {
    CHECK(a.submodules[i].kept_units == b.submodules[i].kept_units);
    CHECK(a.submodules[i].kept_steps == b.submodules[i].kept_steps);
  }

  PruneEvent stray = log.front();
  stray.submodule_id = 99;
  SearchSpace again = fresh;
  CHECK_THROWS_AS(replay(again, {stray}), StateError);
}
