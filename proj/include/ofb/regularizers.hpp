#pragma once

// Adaptive one-hot loss: entropy and tangent-activated variance of each
// submodule's step distribution p = softmax(alpha), the compute-budget
// penalty, and the l1 importance penalty. Also hosts the executable checks
// of the entropy/variance/one-hot equivalence.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ofb/cost_model.hpp"
#include "ofb/search_space.hpp"
#include "ofb/tensor.hpp"

namespace ofb {

struct RegularizerWeights {
  double mu1 = 0.5;   // entropy + variance
  double mu2 = 100.0;  // budget
  double mu3 = 2e-5;  // l1 on importance scores
  double eta = 0.2;   // pruning trigger scale
  // Scale mu1 by 1 - lambda(t) during the search, so the one-hot pressure
  // grows as the bi-mask hands over from S to V.
  bool mu1_ramp = true;
};

// Clamp applied to the normalized variance before the tangent.
inline constexpr double kOmegaEps = 1e-3;

// (D - 1) / D^2: variance of any D-dimensional one-hot vector.
double variance_target(std::size_t d);

// -sum p log p with 0 log 0 = 0. Throws NumericError when p is off the simplex.
Tensor entropy(const Tensor& p);
// sum (p_k - 1/D)^2 / D.
Tensor variance(const Tensor& p);
// tan(pi/2 - pi * omega), omega = clamp(variance / target, eps, 1 - eps).
// Zero (a constant) when D = 1: nothing is left to decide.
Tensor variance_term(const Tensor& p);
// The same activation evaluated directly on a normalized variance.
Tensor tangent_activation(const Tensor& omega);

// |((D-1)/D^2 - sigma(p)) - (1 - sum p^2)/D|.
double variance_identity_residual(std::span<const double> p);

Tensor importance_penalty(const std::vector<Tensor>& scores);
// |g - tau|.
Tensor budget_penalty(const Tensor& g_fraction, double tau);

struct MaskLoss {
  Tensor total;
  double entropy = 0.0;  // sum over submodules
  double psi = 0.0;
  double budget = 0.0;
  double l1 = 0.0;
  double g = 0.0;
};

MaskLoss total_mask_loss(const SearchSpace& space, const CostCoefficients& coeffs,
                         const RegularizerWeights& weights, double tau);

struct TheoremViolation {
  std::size_t dim;
  std::string kind;
  std::string detail;
};

struct TheoremReport {
  std::size_t samples_per_dim = 0;
  std::vector<std::size_t> dims;
  std::size_t vectors_checked = 0;
  std::size_t one_hot_checked = 0;
  double max_identity_residual = 0.0;
  std::vector<TheoremViolation> violations;
  bool passed() const { return violations.empty(); }
  std::string to_json() const;
};

// Dirichlet(1) samples per dim, all one-hot vectors of every dim and of
// D in 2..8, and the uniform vector of every dim.
TheoremReport theorem_suite(std::size_t samples_per_dim, const std::vector<std::size_t>& dims,
                            std::uint64_t seed = 7);

}  // namespace ofb
