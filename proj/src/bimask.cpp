#include "ofb/bimask.hpp"

#include <algorithm>
#include <numeric>

namespace ofb {

double LambdaSchedule::value(std::size_t t) const {
  if (total_steps == 0) return 0.0;
  const double v = 1.0 - static_cast<double>(t) / static_cast<double>(total_steps);
  return std::clamp(v, 0.0, 1.0);
}

Tensor importance_scores(const SubmoduleState& state) { return sigmoid(state.importance); }

std::vector<std::size_t> rank_permutation(std::span<const double> scores) {
  std::vector<std::size_t> perm(scores.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return perm;
}

std::size_t step_of_rank(const std::vector<std::size_t>& live_grid, std::size_t rank) {
  // First step whose cumulative width covers 1-based rank (rank + 1).
  auto it = std::lower_bound(live_grid.begin(), live_grid.end(), rank + 1);
  if (it == live_grid.end()) throw ShapeError("step_of_rank: rank beyond live width");
  return static_cast<std::size_t>(it - live_grid.begin());
}

Tensor sparsity_scores(const SubmoduleState& state) {
  const std::size_t d = state.d_live();
  const std::size_t w = state.w_live();
  if (d == 0) throw StateError("sparsity_scores: no live steps");
  const auto grid = state.live_grid();
  // V = A p with A[r][k] = 1 when k >= step_of_rank(r): a reversed cumulative
  // sum of p expanded over each step's ranks.
  std::vector<double> a(w * d, 0.0);
  for (std::size_t r = 0; r < w; ++r) {
    for (std::size_t k = step_of_rank(grid, r); k < d; ++k) a[r * d + k] = 1.0;
  }
  Tensor p = softmax(state.alpha);
  Tensor v = matmul(Tensor::from(std::move(a), {w, d}), reshape(p, {d, 1}));
  return reshape(v, {w});
}

Tensor assign_by_rank(const Tensor& v_rank, const std::vector<std::size_t>& perm) {
  if (perm.size() != v_rank.numel()) throw ShapeError("assign_by_rank: length mismatch");
  std::vector<std::size_t> rank_of(perm.size());
  for (std::size_t r = 0; r < perm.size(); ++r) rank_of[perm[r]] = r;
  return gather(v_rank, rank_of, {perm.size()});
}

Tensor blend(const Tensor& s, const Tensor& v, double lambda) {
  if (s.shape() != v.shape()) {
    throw ShapeError("blend: S " + shape_str(s.shape()) + " vs V " + shape_str(v.shape()));
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("blend: lambda outside [0, 1]");
  return add(affine(s, lambda), affine(v, 1.0 - lambda));
}

BiMaskSnapshot compute_bimask(const SearchSpace& space, double lambda) {
  BiMaskSnapshot snap;
  snap.lambda = lambda;
  snap.submodules.reserve(space.size());
  for (const auto& sub : space.submodules) {
    SubmoduleMask mask;
    mask.s = importance_scores(sub);
    mask.permutation = rank_permutation(mask.s.data());
    mask.v = assign_by_rank(sparsity_scores(sub), mask.permutation);
    mask.m = blend(mask.s, mask.v, lambda);
    snap.submodules.push_back(std::move(mask));
  }
  return snap;
}

Tensor expand_to_full(const SubmoduleState& state, const Tensor& m_live) {
  return scatter(m_live, state.live_unit_ids, state.spec.full_width);
}

}  // namespace ofb
