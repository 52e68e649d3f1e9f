#include "ofb/runtime.hpp"

#include <malloc.h>

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <string>

#include "ofb/error.hpp"

namespace ofb {

namespace {
std::size_t g_threads = 1;
}

void configure_runtime() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  if (const char* env = std::getenv("OFB_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v < 1) throw std::invalid_argument(env);
      g_threads = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ConfigError(std::string("OFB_THREADS must be a positive integer, got '") + env + "'");
    }
  }
}

double standard_normal(std::mt19937_64& rng) {
  const double u1 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t thread_cap() { return g_threads; }

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 of the pair
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + stream + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace ofb
