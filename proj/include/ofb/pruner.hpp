#pragma once

// Triggered step pruning: every interval iterations after warmup, drop the
// steps whose probability is at most eta / D_live.

#include <string>
#include <vector>

#include <json.hpp>

#include "ofb/search_space.hpp"

namespace ofb {

struct PruneEvent {
  std::size_t step = 0;
  std::size_t submodule_id = 0;
  std::string label;
  std::vector<std::size_t> removed_steps;     // original step ids
  std::vector<std::size_t> removed_unit_ids;  // original unit ids
  std::vector<double> p_before;
  double p_min = 0.0;
  double threshold = 0.0;
  std::string reason;  // "trigger" or "finish"

  // Positions (in the pre-event live order) that survive; used to compact
  // optimizer moments. Not serialized.
  std::vector<std::size_t> alpha_keep;
  std::vector<std::size_t> importance_keep;

  nlohmann::json to_json() const;
  static PruneEvent from_json(const nlohmann::json& j);
};

struct PruneSchedule {
  std::size_t interval = 1;
  double eta = 0.2;
  std::size_t warmup_steps = 0;
  bool finished = false;
};

std::vector<PruneEvent> maybe_prune(SearchSpace& space, const PruneSchedule& schedule,
                                    std::size_t t);

// g_fraction <= tau * (1 + tolerance) and every submodule decided or one-hot
// within 1e-3.
bool finish_check(const SearchSpace& space, double g_fraction, double tau,
                  double tolerance = 0.1);

// Collapses every undecided submodule to its most probable step.
std::vector<PruneEvent> harden(SearchSpace& space, std::size_t t);

// Re-applies logged events to a fresh space.
void replay(SearchSpace& space, const std::vector<PruneEvent>& events);

}  // namespace ofb
