#pragma once

// Compute cost of the toy ViT as a polynomial in submodule widths.
//
// Widths are in submodule units: E (patch-embed channels), and per layer C
// (channels per head), H (heads), F (MLP hidden). Multiply-accumulates of
// the classification forward pass for one image with N tokens, P pixels per
// patch and K classes:
//   N*P*E + K*E + sum_l [ 4*N*E*H*C + 2*N^2*H*C + 2*N*E*F ]
// The continuous extension evaluates the polynomial at expected widths.

#include <cstdint>
#include <string>
#include <vector>

#include "ofb/model_config.hpp"
#include "ofb/search_space.hpp"
#include "ofb/tensor.hpp"

namespace ofb {

struct ViTArch;

struct CostTerm {
  double coef = 0.0;
  std::vector<std::size_t> factors;  // submodule slots multiplied together
};

struct CostCoefficients {
  std::vector<CostTerm> flops;
  std::vector<CostTerm> params;
  double full_flops = 0.0;
  double full_params = 0.0;
  bool calibrated = false;
};

// Slot of a submodule in build_space order.
std::size_t submodule_slot(SubmoduleKind kind, int layer);

// Closed-form coefficients, validated against the instrumented MAC counter
// and direct parameter counting at several discrete width settings. Throws
// Error naming the setting if any residual is non-zero.
CostCoefficients calibrate(const ToyViTConfig& model);

double evaluate(const std::vector<CostTerm>& terms, const std::vector<double>& widths);

// Differentiable expected kept width: sum_k c_k p_k over the live grid.
Tensor expected_width(const SubmoduleState& state);

// Polynomial at the given (differentiable) widths divided by full FLOPs.
Tensor g_from_widths(const std::vector<Tensor>& widths, const CostCoefficients& coeffs);
Tensor g_of_V(const SearchSpace& space, const CostCoefficients& coeffs);

struct CostReport {
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
  double flops_fraction = 0.0;
  double params_fraction = 0.0;
  std::string to_json() const;
};

// Exact counts for an architecture: MACs from an instrumented forward pass
// of the pruned model, parameters by direct count (mask token and decoder
// excluded).
CostReport discrete_cost(const Architecture& arch, const ToyViTConfig& model,
                         const CostCoefficients& coeffs);

// Same counts for the live widths of any model.
CostReport model_cost(const ViTArch& arch, const CostCoefficients& coeffs);

// Unit counts per slot for an architecture.
std::vector<double> architecture_widths(const Architecture& arch, const ToyViTConfig& model);

}  // namespace ofb
