#pragma once

#include <cstdint>
#include <random>

namespace ofb {

// Keeps large tensor buffers on the heap instead of fresh mmaps and reads
// OFB_THREADS (default 1; everything here runs on one thread). Call once
// from main.
void configure_runtime();
std::size_t thread_cap();

// Standard normal via Box-Muller on the raw engine output, independent of
// the standard library's distribution implementations.
double standard_normal(std::mt19937_64& rng);

// Independent seed for a named random stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace ofb
