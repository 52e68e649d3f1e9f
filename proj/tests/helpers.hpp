#pragma once

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "ofb/search_space.hpp"
#include "ofb/tensor.hpp"

namespace testing {

inline std::vector<double> values(const ofb::Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0,
                                         double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// A channel-kind submodule with an explicit grid and every unit live.
inline ofb::SubmoduleState make_state(std::vector<std::size_t> grid, std::vector<double> alpha,
                                      std::vector<double> importance) {
  ofb::SubmoduleState st;
  const std::size_t full = grid.back();
  st.spec = {ofb::SubmoduleKind::MlpChannels, 0, full, {0.0, 1.0, 0.0}, grid};
  const std::size_t d = alpha.size();
  st.alpha = ofb::Tensor::from(std::move(alpha), {d});
  st.importance = ofb::Tensor::from(std::move(importance), {full});
  st.live_unit_ids.resize(full);
  std::iota(st.live_unit_ids.begin(), st.live_unit_ids.end(), 0);
  st.live_steps.resize(grid.size());
  std::iota(st.live_steps.begin(), st.live_steps.end(), 0);
  return st;
}

inline std::vector<double> log_of(const std::vector<double>& p) {
  std::vector<double> out;
  for (double v : p) out.push_back(std::log(v));
  return out;
}

}  // namespace testing
