#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace ambl {

// mt19937_64 output is fixed by the standard; the distributions in <random>
// are not, so sampling helpers below are written out to keep every stream
// bit-reproducible across standard libraries.
using Rng = std::mt19937_64;

// SplitMix64 finalizer, used to derive independent sub-seeds.
uint64_t mix64(uint64_t x);
uint64_t derive_seed(uint64_t seed, uint64_t stream);

// Uniform integer in [0, bound). bound must be positive.
uint64_t uniform_below(Rng& rng, uint64_t bound);

// Uniform double in [0, 1) with 53 random bits.
double uniform_unit(Rng& rng);

// Standard normal via Box-Muller (one value per call, the pair partner is discarded).
double standard_normal(Rng& rng);

// Binomial(trials, 1/2) as the popcount of `trials` fair bits. trials <= 64.
int binomial_half(Rng& rng, int trials);

std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

}  // namespace ambl
