#include "ofb/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "ofb/bimask.hpp"
#include "ofb/runtime.hpp"

namespace ofb {

void ToyViTConfig::validate() const {
  std::ostringstream err;
  if (patch_size == 0 || image_size % patch_size != 0) {
    err << "image_size must be divisible by patch_size; ";
  }
  if (heads * head_dim != embed_dim) err << "embed_dim must equal heads * head_dim; ";
  if (embed_dim == 0 || depth == 0 || heads == 0 || head_dim == 0 || mlp_dim == 0) {
    err << "widths and depth must be positive; ";
  }
  if (classes < 2) err << "classes must be at least 2; ";
  if (!err.str().empty()) throw ConfigError("model config: " + err.str());
}

std::string to_string(SubmoduleKind kind) {
  switch (kind) {
    case SubmoduleKind::QkvChannels: return "qkv-channels";
    case SubmoduleKind::MlpChannels: return "mlp-channels";
    case SubmoduleKind::HeadCount: return "head-count";
    case SubmoduleKind::PatchEmbedChannels: return "patch-embed-channels";
  }
  return "unknown";
}

SubmoduleKind submodule_kind_from_string(const std::string& name) {
  for (auto k : {SubmoduleKind::QkvChannels, SubmoduleKind::MlpChannels, SubmoduleKind::HeadCount,
                 SubmoduleKind::PatchEmbedChannels}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown submodule kind '" + name + "'");
}

std::string SubmoduleSpec::label() const {
  if (layer < 0) return to_string(kind);
  return to_string(kind) + "@" + std::to_string(layer);
}

std::vector<std::size_t> SubmoduleState::live_grid() const {
  std::vector<std::size_t> g;
  g.reserve(live_steps.size());
  for (auto s : live_steps) g.push_back(spec.grid[s]);
  return g;
}

void SubmoduleState::check() const {
  if (live_steps.empty()) throw StateError(spec.label() + ": no live steps");
  if (alpha.numel() != live_steps.size()) throw StateError(spec.label() + ": alpha size");
  if (importance.numel() != live_unit_ids.size()) {
    throw StateError(spec.label() + ": importance size");
  }
  if (live_unit_ids.size() != spec.grid[live_steps.back()]) {
    throw StateError(spec.label() + ": live width does not match top live candidate");
  }
  for (std::size_t i = 1; i < live_unit_ids.size(); ++i) {
    if (live_unit_ids[i] <= live_unit_ids[i - 1]) throw StateError(spec.label() + ": unit ids");
  }
  for (std::size_t i = 1; i < live_steps.size(); ++i) {
    if (live_steps[i] <= live_steps[i - 1]) throw StateError(spec.label() + ": step ids");
  }
}

std::size_t SearchSpace::total_live_units() const {
  std::size_t n = 0;
  for (const auto& s : submodules) n += s.w_live();
  return n;
}

std::size_t SearchSpace::index_of(SubmoduleKind kind, int layer) const {
  for (std::size_t i = 0; i < submodules.size(); ++i) {
    if (submodules[i].spec.kind == kind && submodules[i].spec.layer == layer) return i;
  }
  throw StateError("no submodule " + to_string(kind) + " at layer " + std::to_string(layer));
}

namespace {

bool near_integer(double x) { return std::fabs(x - std::round(x)) < 1e-9 && std::round(x) > 0; }

// Grid for a channel kind from ratio triples; appends a message on failure.
std::vector<std::size_t> ratio_grid(std::size_t full, const GridTriple& t, const std::string& site,
                                    std::vector<std::string>& problems) {
  const double lo = full * t.lo;
  const double step = full * t.step;
  const double count = (t.hi - t.lo) / t.step + 1.0;
  if (!(t.lo > 0.0 && t.lo <= t.hi && std::fabs(t.hi - 1.0) < 1e-12)) {
    problems.push_back(site + ": need 0 < lo <= hi = 1");
    return {};
  }
  if (!near_integer(lo) || !near_integer(step) || !near_integer(count)) {
    std::ostringstream os;
    os << site << ": width " << full << " not divisible by grid (" << t.lo << ", " << t.hi << ", "
       << t.step << ")";
    problems.push_back(os.str());
    return {};
  }
  const auto lo_u = static_cast<std::size_t>(std::llround(lo));
  const auto step_u = static_cast<std::size_t>(std::llround(step));
  const auto d = static_cast<std::size_t>(std::llround(count));
  std::vector<std::size_t> grid(d);
  for (std::size_t k = 0; k < d; ++k) grid[k] = lo_u + k * step_u;
  if (grid.back() != full) problems.push_back(site + ": grid does not reach full width");
  return grid;
}

// Head-count grid: lo, lo+step, ... below hi, closed with hi itself.
std::vector<std::size_t> head_grid(std::size_t heads, const GridTriple& t, const std::string& site,
                                   std::vector<std::string>& problems) {
  const double hi = t.hi > 0.0 ? t.hi : static_cast<double>(heads);
  if (!near_integer(t.lo) || !near_integer(t.step) || !near_integer(hi) || t.lo > hi ||
      static_cast<std::size_t>(hi) != heads) {
    problems.push_back(site + ": head grid must be integral with hi = num_heads");
    return {};
  }
  std::vector<std::size_t> grid;
  for (auto h = static_cast<std::size_t>(t.lo); h < heads; h += static_cast<std::size_t>(t.step)) {
    grid.push_back(h);
  }
  grid.push_back(heads);
  return grid;
}

SubmoduleState make_state(SubmoduleSpec spec, std::mt19937_64& rng, const SpaceConfig& cfg) {
  SubmoduleState st;
  const std::size_t d = spec.grid.size();
  const std::size_t w = spec.full_width;
  std::vector<double> alpha(d), imp(w);
  for (auto& a : alpha) a = cfg.alpha_init_std * standard_normal(rng);
  for (auto& s : imp) s = cfg.importance_init_std * standard_normal(rng);
  st.alpha = Tensor::from(std::move(alpha), {d}, true);
  st.importance = Tensor::from(std::move(imp), {w}, true);
  st.live_unit_ids.resize(w);
  for (std::size_t i = 0; i < w; ++i) st.live_unit_ids[i] = i;
  st.live_steps.resize(d);
  for (std::size_t k = 0; k < d; ++k) st.live_steps[k] = k;
  st.spec = std::move(spec);
  return st;
}

std::vector<SubmoduleSpec> build_specs(const ToyViTConfig& model, const SpaceConfig& config) {
  model.validate();
  std::vector<std::string> problems;
  std::vector<SubmoduleSpec> specs;
  auto add = [&](SubmoduleKind kind, int layer, std::size_t full, const GridTriple& t) {
    SubmoduleSpec spec{kind, layer, full, t, {}};
    spec.grid = kind == SubmoduleKind::HeadCount ? head_grid(full, t, spec.label(), problems)
                                                 : ratio_grid(full, t, spec.label(), problems);
    specs.push_back(std::move(spec));
  };
  add(SubmoduleKind::PatchEmbedChannels, -1, model.embed_dim, config.patch_embed);
  for (std::size_t l = 0; l < model.depth; ++l) {
    const int layer = static_cast<int>(l);
    add(SubmoduleKind::QkvChannels, layer, model.head_dim, config.qkv);
    add(SubmoduleKind::HeadCount, layer, model.heads, config.heads);
    add(SubmoduleKind::MlpChannels, layer, model.mlp_dim, config.mlp);
  }
  if (!problems.empty()) {
    std::string msg = "search space configuration error:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  return specs;
}

}  // namespace

SearchSpace build_space(const ToyViTConfig& model, const SpaceConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SearchSpace space;
  for (auto& spec : build_specs(model, config)) {
    space.submodules.push_back(make_state(std::move(spec), rng, config));
  }
  return space;
}

namespace {

std::vector<std::size_t> keep_positions(const std::vector<std::size_t>& ids,
                                        const std::set<std::size_t>& removed) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!removed.count(ids[i])) keep.push_back(i);
  }
  return keep;
}

Tensor select_leaf(const Tensor& t, const std::vector<std::size_t>& keep) {
  std::vector<double> v;
  v.reserve(keep.size());
  for (auto i : keep) v.push_back(t[i]);
  return Tensor::from(std::move(v), {keep.size()}, true);
}

std::set<std::size_t> validate_steps(const SubmoduleState& state,
                                     const std::vector<std::size_t>& steps) {
  std::set<std::size_t> removed(steps.begin(), steps.end());
  if (removed.size() != steps.size()) throw StateError("prune_steps: duplicate step ids");
  for (auto s : removed) {
    if (!std::binary_search(state.live_steps.begin(), state.live_steps.end(), s)) {
      throw StateError("prune_steps: step " + std::to_string(s) + " is not live in " +
                       state.spec.label());
    }
  }
  if (removed.size() >= state.live_steps.size()) {
    throw StateError("prune_steps: refusing to remove every step of " + state.spec.label() +
                     " (at least one step must remain)");
  }
  return removed;
}

void commit(SubmoduleState& state, const std::set<std::size_t>& steps,
            const std::set<std::size_t>& units) {
  auto step_keep = keep_positions(state.live_steps, steps);
  auto unit_keep = keep_positions(state.live_unit_ids, units);
  state.alpha = select_leaf(state.alpha, step_keep);
  state.importance = select_leaf(state.importance, unit_keep);
  std::vector<std::size_t> live_steps, live_units;
  for (auto i : step_keep) live_steps.push_back(state.live_steps[i]);
  for (auto i : unit_keep) live_units.push_back(state.live_unit_ids[i]);
  state.live_steps = std::move(live_steps);
  state.live_unit_ids = std::move(live_units);
  state.pruned = true;
  state.check();
}

std::size_t width_after(const SubmoduleState& state, const std::set<std::size_t>& removed) {
  std::size_t top = 0;
  for (auto s : state.live_steps) {
    if (!removed.count(s)) top = s;
  }
  return state.spec.grid[top];
}

}  // namespace

std::vector<std::size_t> prune_steps(SubmoduleState& state,
                                     const std::vector<std::size_t>& steps_to_remove) {
  if (steps_to_remove.empty()) return {};
  const auto removed_steps = validate_steps(state, steps_to_remove);
  const std::size_t new_width = width_after(state, removed_steps);
  const std::size_t drop = state.w_live() - new_width;

  const Tensor s = importance_scores(state);
  const auto perm = rank_permutation(s.data());
  std::set<std::size_t> removed_units;
  for (std::size_t r = state.w_live() - drop; r < state.w_live(); ++r) {
    removed_units.insert(state.live_unit_ids[perm[r]]);
  }
  commit(state, removed_steps, removed_units);
  return {removed_units.begin(), removed_units.end()};
}

void apply_recorded_prune(SubmoduleState& state, const std::vector<std::size_t>& steps,
                          const std::vector<std::size_t>& unit_ids) {
  if (steps.empty()) return;
  const auto removed_steps = validate_steps(state, steps);
  std::set<std::size_t> units(unit_ids.begin(), unit_ids.end());
  if (units.size() != state.w_live() - width_after(state, removed_steps)) {
    throw StateError("apply_recorded_prune: unit count inconsistent with step removal");
  }
  for (auto u : units) {
    if (!std::binary_search(state.live_unit_ids.begin(), state.live_unit_ids.end(), u)) {
      throw StateError("apply_recorded_prune: unit " + std::to_string(u) + " is not live");
    }
  }
  commit(state, removed_steps, units);
}

const ArchitectureEntry& Architecture::find(SubmoduleKind kind, int layer) const {
  for (const auto& e : submodules) {
    if (e.kind == kind && e.layer == layer) return e;
  }
  throw StateError("architecture has no " + to_string(kind) + " at layer " +
                   std::to_string(layer));
}

Architecture export_architecture(const SearchSpace& space) {
  Architecture arch;
  for (const auto& s : space.submodules) {
    arch.submodules.push_back(
        {s.spec.kind, s.spec.layer, s.spec.full_width, s.live_unit_ids, s.live_steps});
  }
  return arch;
}

Architecture full_architecture(const ToyViTConfig& model, const SpaceConfig& config) {
  Architecture arch;
  for (const auto& spec : build_specs(model, config)) {
    ArchitectureEntry e{spec.kind, spec.layer, spec.full_width, {}, {}};
    for (std::size_t i = 0; i < spec.full_width; ++i) e.kept_units.push_back(i);
    for (std::size_t k = 0; k < spec.grid.size(); ++k) e.kept_steps.push_back(k);
    arch.submodules.push_back(std::move(e));
  }
  return arch;
}

}  // namespace ofb
