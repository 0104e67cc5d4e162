#pragma once

#include <cmath>
#include <cstdint>

// Counter-based deterministic RNG. Every random draw is a pure function of
// (seed, key...), so traces replay exactly regardless of thread count or
// evaluation order, and checkpoint re-execution sees identical samples.

namespace rfd {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t rng_hash(uint64_t seed, uint64_t k0, uint64_t k1 = 0, uint64_t k2 = 0,
                         uint64_t k3 = 0) {
    uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ k0);
    h = splitmix64(h ^ k1);
    h = splitmix64(h ^ k2);
    h = splitmix64(h ^ k3);
    return h;
}

// Uniform in [0, 1).
inline double rng_uniform(uint64_t seed, uint64_t k0, uint64_t k1 = 0, uint64_t k2 = 0,
                          uint64_t k3 = 0) {
    return static_cast<double>(rng_hash(seed, k0, k1, k2, k3) >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller. Uses two independent counters derived from
// the same key.
inline double rng_gaussian(uint64_t seed, uint64_t k0, uint64_t k1 = 0, uint64_t k2 = 0,
                           uint64_t k3 = 0) {
    const double u1 = rng_uniform(seed, k0, k1, k2, k3 * 2 + 1);
    const double u2 = rng_uniform(seed, k0, k1, k2, k3 * 2 + 2);
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

} // namespace rfd
