#pragma once

// Importance scores, sparsity scores and the time-blended bi-mask.

#include <cstddef>
#include <span>
#include <vector>

#include "ofb/search_space.hpp"
#include "ofb/tensor.hpp"

namespace ofb {

// lambda(t) = 1 - t/T clamped to [0, 1].
struct LambdaSchedule {
  std::size_t total_steps = 1;
  double value(std::size_t t) const;
};

// sigmoid of the importance logits, in live-unit order.
Tensor importance_scores(const SubmoduleState& state);

// Stable descending sort; perm[r] is the unit (position) at rank r.
std::vector<std::size_t> rank_permutation(std::span<const double> scores);

// Grid step (0-based, over the live grid) that owns 0-based rank r.
std::size_t step_of_rank(const std::vector<std::size_t>& live_grid, std::size_t rank);

// Sparsity scores in rank order: V[r] = sum of p_k over live steps k at or
// above the step owning rank r, with p = softmax(alpha). Differentiable in alpha.
Tensor sparsity_scores(const SubmoduleState& state);

// Places rank-ordered values onto units: out[perm[r]] = v_rank[r].
Tensor assign_by_rank(const Tensor& v_rank, const std::vector<std::size_t>& perm);

// m = lambda * S + (1 - lambda) * V, elementwise.
Tensor blend(const Tensor& s, const Tensor& v, double lambda);

struct SubmoduleMask {
  Tensor s;  // importance scores, unit order
  Tensor v;  // sparsity scores, unit order
  Tensor m;  // blended bi-mask, unit order
  std::vector<std::size_t> permutation;
};

struct BiMaskSnapshot {
  double lambda = 1.0;
  std::vector<SubmoduleMask> submodules;
};

BiMaskSnapshot compute_bimask(const SearchSpace& space, double lambda);

// Full-width mask for a submodule: live units carry m, pruned units 0.
Tensor expand_to_full(const SubmoduleState& state, const Tensor& m_live);

}  // namespace ofb
