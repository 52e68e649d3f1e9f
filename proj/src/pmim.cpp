#include "ofb/pmim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ofb/error.hpp"

namespace ofb {

std::string to_string(MaskingMode mode) {
  switch (mode) {
    case MaskingMode::Progressive: return "progressive";
    case MaskingMode::Constant: return "constant";
    case MaskingMode::None: return "none";
  }
  return "?";
}

MaskingMode masking_mode_from_string(const std::string& name) {
  if (name == "progressive") return MaskingMode::Progressive;
  if (name == "constant") return MaskingMode::Constant;
  if (name == "none") return MaskingMode::None;
  throw ConfigError("unknown masking mode '" + name + "' (progressive, constant, none)");
}

double MaskingSchedule::gamma(std::size_t t) const {
  switch (mode) {
    case MaskingMode::None: return 0.0;
    case MaskingMode::Constant: return gamma_end;
    case MaskingMode::Progressive: break;
  }
  if (total_steps == 0) return gamma_end;
  const double frac =
      std::min(static_cast<double>(t) / static_cast<double>(total_steps), 1.0);
  if (frac >= 1.0) return gamma_end;
  return gamma_start + (gamma_end - gamma_start) * frac;
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw StateError("uniform_below: empty range");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

std::size_t masked_count(std::size_t n_patches, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw ConfigError("masking ratio must lie in [0, 1], got " + std::to_string(gamma));
  }
  const auto k = static_cast<std::size_t>(std::floor(gamma * static_cast<double>(n_patches) + 0.5));
  return std::min(k, n_patches);
}

std::vector<std::uint8_t> sample_mask(std::size_t n_patches, double gamma, std::mt19937_64& rng) {
  if (n_patches == 0) throw ShapeError("sample_mask: no patches");
  const std::size_t k = masked_count(n_patches, gamma);
  std::vector<std::size_t> order(n_patches);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint8_t> mask(n_patches, 0);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_below(rng, n_patches - i);
    std::swap(order[i], order[j]);
    mask[order[i]] = 1;
  }
  return mask;
}

}  // namespace ofb
