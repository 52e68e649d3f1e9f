#pragma once

// Prunable submodules of the toy supernet and their candidate width grids.
//
// Every submodule owns a grid of cumulative candidate widths c_0 < c_1 < ...
// < c_{D-1} = full_width (in units). Step k of the grid is the interval of
// importance ranks (c_{k-1}, c_k]. Architecture logits alpha hold one entry
// per live step; importance logits hold one entry per live unit.

#include <cstdint>
#include <string>
#include <vector>

#include "ofb/model_config.hpp"
#include "ofb/tensor.hpp"

namespace ofb {

enum class SubmoduleKind { QkvChannels, MlpChannels, HeadCount, PatchEmbedChannels };

std::string to_string(SubmoduleKind kind);
SubmoduleKind submodule_kind_from_string(const std::string& name);

// (lowest, highest, step) of one grid.
struct GridTriple {
  double lo;
  double hi;
  double step;
};

struct SpaceConfig {
  GridTriple qkv{0.25, 1.0, 0.125};   // ratios of head_dim
  GridTriple mlp{0.25, 1.0, 0.125};   // ratios of mlp_dim
  GridTriple heads{1.0, 0.0, 2.0};    // head counts; hi <= 0 means num_heads
  GridTriple patch_embed{0.5, 1.0, 1.0 / 32.0};  // ratios of embed_dim
  double alpha_init_std = 1.0;
  double importance_init_std = 0.1;
};

struct SubmoduleSpec {
  SubmoduleKind kind;
  int layer;  // -1 for the global patch-embedding submodule
  std::size_t full_width;
  GridTriple triple;
  std::vector<std::size_t> grid;  // cumulative candidate widths

  std::size_t candidates() const { return grid.size(); }
  // Unit step between consecutive candidates (first gap; uniform for channel kinds).
  std::size_t unit_step() const { return grid.size() > 1 ? grid[1] - grid[0] : grid[0]; }
  std::string label() const;
};

struct SubmoduleState {
  SubmoduleSpec spec;
  Tensor alpha;       // [D_live]
  Tensor importance;  // [W_live], pre-sigmoid
  std::vector<std::size_t> live_unit_ids;  // strictly increasing original ids
  std::vector<std::size_t> live_steps;     // strictly increasing original step ids
  bool pruned = false;

  std::size_t d_live() const { return live_steps.size(); }
  std::size_t w_live() const { return live_unit_ids.size(); }
  // Cumulative widths of the live steps.
  std::vector<std::size_t> live_grid() const;
  // Throws StateError on violated bookkeeping.
  void check() const;
};

struct SearchSpace {
  std::vector<SubmoduleState> submodules;
  std::size_t size() const { return submodules.size(); }
  std::size_t total_live_units() const;
  // Index of the submodule for (kind, layer); throws when absent.
  std::size_t index_of(SubmoduleKind kind, int layer) const;
};

// Submodule order: patch-embed first, then per layer qkv, heads, mlp.
SearchSpace build_space(const ToyViTConfig& model, const SpaceConfig& config, std::uint64_t seed);

// Removes live steps (original step ids). Units are dropped only when the
// top live candidate shrinks: the new width is the largest surviving
// candidate and the lowest-importance units beyond it are removed. Returns
// the removed unit ids. Refuses to remove every step.
std::vector<std::size_t> prune_steps(SubmoduleState& state,
                                     const std::vector<std::size_t>& steps_to_remove);

// Replays a recorded removal: same as prune_steps but the removed unit ids
// are given; throws if they are inconsistent with the resulting width.
void apply_recorded_prune(SubmoduleState& state, const std::vector<std::size_t>& steps,
                          const std::vector<std::size_t>& unit_ids);

// Architecture export: one entry per submodule.
struct ArchitectureEntry {
  SubmoduleKind kind;
  int layer;
  std::size_t full_width;
  std::vector<std::size_t> kept_units;
  std::vector<std::size_t> kept_steps;
};

struct Architecture {
  std::vector<ArchitectureEntry> submodules;
  const ArchitectureEntry& find(SubmoduleKind kind, int layer) const;
};

Architecture export_architecture(const SearchSpace& space);
// Unpruned architecture of `model` (every unit and step kept).
Architecture full_architecture(const ToyViTConfig& model, const SpaceConfig& config);

}  // namespace ofb
