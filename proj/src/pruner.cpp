#include "ofb/pruner.hpp"

#include <algorithm>
#include <cmath>

#include "ofb/bimask.hpp"

namespace ofb {

namespace {

std::vector<double> probabilities(const SubmoduleState& s) {
  const Tensor p = softmax(s.alpha.detach());
  return {p.data().begin(), p.data().end()};
}

std::vector<std::size_t> surviving_positions(const std::vector<std::size_t>& before,
                                             const std::vector<std::size_t>& after) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (std::binary_search(after.begin(), after.end(), before[i])) keep.push_back(i);
  }
  return keep;
}

PruneEvent remove(SubmoduleState& s, std::size_t id, std::size_t t,
                  const std::vector<std::size_t>& positions, const std::vector<double>& p,
                  double threshold, const char* reason) {
  PruneEvent e;
  e.step = t;
  e.submodule_id = id;
  e.label = s.spec.label();
  for (auto k : positions) e.removed_steps.push_back(s.live_steps[k]);
  e.p_before = p;
  e.p_min = *std::min_element(p.begin(), p.end());
  e.threshold = threshold;
  e.reason = reason;
  const auto steps_before = s.live_steps;
  const auto units_before = s.live_unit_ids;
  e.removed_unit_ids = prune_steps(s, e.removed_steps);
  std::sort(e.removed_unit_ids.begin(), e.removed_unit_ids.end());
  e.alpha_keep = surviving_positions(steps_before, s.live_steps);
  e.importance_keep = surviving_positions(units_before, s.live_unit_ids);
  return e;
}

}  // namespace

nlohmann::json PruneEvent::to_json() const {
  return {{"step", step},
          {"submodule_id", submodule_id},
          {"label", label},
          {"removed_steps", removed_steps},
          {"removed_unit_ids", removed_unit_ids},
          {"p_before", p_before},
          {"p_min", p_min},
          {"threshold", threshold},
          {"reason", reason}};
}

PruneEvent PruneEvent::from_json(const nlohmann::json& j) {
  PruneEvent e;
  e.step = j.at("step").get<std::size_t>();
  e.submodule_id = j.at("submodule_id").get<std::size_t>();
  e.label = j.value("label", "");
  e.removed_steps = j.at("removed_steps").get<std::vector<std::size_t>>();
  e.removed_unit_ids = j.at("removed_unit_ids").get<std::vector<std::size_t>>();
  e.p_before = j.value("p_before", std::vector<double>{});
  e.p_min = j.value("p_min", 0.0);
  e.threshold = j.value("threshold", 0.0);
  e.reason = j.value("reason", "");
  return e;
}

std::vector<PruneEvent> maybe_prune(SearchSpace& space, const PruneSchedule& schedule,
                                    std::size_t t) {
  std::vector<PruneEvent> events;
  if (schedule.finished || t < schedule.warmup_steps) return events;
  if (schedule.interval == 0) throw ConfigError("prune interval must be positive");
  if (t % schedule.interval != 0) return events;
  for (std::size_t i = 0; i < space.size(); ++i) {
    auto& s = space.submodules[i];
    const std::size_t d = s.d_live();
    if (d < 2) continue;
    const auto p = probabilities(s);
    const double threshold = schedule.eta / static_cast<double>(d);
    const auto top = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    std::vector<std::size_t> positions;
    for (std::size_t k = 0; k < d; ++k) {
      if (k != top && p[k] <= threshold) positions.push_back(k);
    }
    if (positions.empty()) continue;
    events.push_back(remove(s, i, t, positions, p, threshold, "trigger"));
  }
  return events;
}

bool finish_check(const SearchSpace& space, double g_fraction, double tau, double tolerance) {
  if (g_fraction > tau * (1.0 + tolerance)) return false;
  for (const auto& s : space.submodules) {
    if (s.d_live() == 1) continue;
    const auto p = probabilities(s);
    if (*std::max_element(p.begin(), p.end()) < 1.0 - 1e-3) return false;
  }
  return true;
}

std::vector<PruneEvent> harden(SearchSpace& space, std::size_t t) {
  std::vector<PruneEvent> events;
  for (std::size_t i = 0; i < space.size(); ++i) {
    auto& s = space.submodules[i];
    if (s.d_live() < 2) continue;
    const auto p = probabilities(s);
    const auto top = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    std::vector<std::size_t> positions;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (k != top) positions.push_back(k);
    }
    events.push_back(remove(s, i, t, positions, p, 0.0, "finish"));
  }
  return events;
}

void replay(SearchSpace& space, const std::vector<PruneEvent>& events) {
  for (const auto& e : events) {
    if (e.submodule_id >= space.size()) {
      throw StateError("replay: event names submodule " + std::to_string(e.submodule_id) +
                       " outside the space");
    }
    apply_recorded_prune(space.submodules[e.submodule_id], e.removed_steps, e.removed_unit_ids);
  }
}

}  // namespace ofb
