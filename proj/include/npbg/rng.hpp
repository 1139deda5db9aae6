#pragma once

#include <cstdint>
#include <random>

namespace npbg {

/// Seeded generator with fixed-width draws so sequences are identical across
/// platforms and standard libraries.
struct Rng {
    std::mt19937_64 gen;

    explicit Rng(uint64_t seed) : gen(seed) {}

    uint64_t next() { return gen(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    int64_t uniform_int(int64_t n) { return static_cast<int64_t>(gen() % static_cast<uint64_t>(n)); }
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace npbg
