// Deterministic random number generation.
//
// SplitMix64 (Steele, Lea, Flood 2014) drives every stochastic operation in
// the library. The generator is defined purely on 64-bit integer arithmetic,
// so a given seed yields the same raw stream on every platform. Uniform
// doubles take the top 53 bits; normals use the Box-Muller transform
// without caching the second variate, so the state is always one integer.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace gatres {

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Independent stream for sub-task `stream` of a run seeded with `seed`.
    /// Used where work may be scheduled in any order (per-tree forest fits).
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        return Rng(mix(seed ^ mix(stream + 0x9e3779b97f4a7c15ULL)));
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n), unbiased by rejection.
    std::uint64_t uniform_index(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

} // namespace gatres
