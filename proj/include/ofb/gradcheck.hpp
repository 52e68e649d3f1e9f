#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ofb/tensor.hpp"

namespace ofb {

inline constexpr double kGradFloor = 1e-6;

// Max over coordinates of |analytic - central| / max(|analytic| + |central|, 1e-6)
// for a scalar function of one parameter tensor. The floor keeps gradients
// that vanish exactly (for instance by softmax shift invariance) from
// turning finite-difference noise into a relative error. `f` must build a fresh graph
// on every call. Throws NumericError when f is non-finite near theta.
double gradient_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& theta,
                      double h = 1e-5);

struct GradcheckResult {
  std::string name;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
};

// Every autodiff primitive, the entropy and variance terms, the sparsity
// scores, the cost estimate and the full search objective on a 2-layer
// toy state.
std::vector<GradcheckResult> gradcheck_suite(std::uint64_t seed = 3);

}  // namespace ofb
