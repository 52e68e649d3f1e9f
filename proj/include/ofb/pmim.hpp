#pragma once

// Progressive masked image modeling: masking-ratio schedule and random
// patch masks.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace ofb {

enum class MaskingMode { Progressive, Constant, None };

std::string to_string(MaskingMode mode);
MaskingMode masking_mode_from_string(const std::string& name);

struct MaskingSchedule {
  MaskingMode mode = MaskingMode::Progressive;
  double gamma_start = 0.01;
  double gamma_end = 0.25;
  std::size_t total_steps = 1;

  // Progressive: linear from gamma_start to gamma_end over total_steps,
  // then held. Constant: gamma_end. None: 0.
  double gamma(std::size_t t) const;
};

// Uniform integer in [0, n) by rejection on raw engine output, so draws do
// not depend on the standard library's distribution implementation.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n);

// round-half-up(gamma * n)
std::size_t masked_count(std::size_t n_patches, double gamma);

// Exactly masked_count(n, gamma) positions set, drawn without replacement.
std::vector<std::uint8_t> sample_mask(std::size_t n_patches, double gamma, std::mt19937_64& rng);

}  // namespace ofb
