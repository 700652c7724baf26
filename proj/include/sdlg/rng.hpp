#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sdlg {

/// Explicit random-number handle passed to every stochastic routine.
///
/// Uniform draws are built directly from the 64-bit engine output so that a
/// seed reproduces the same stream on every standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

    /// Seed for an independent child stream, keyed by a path of integers.
    static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path)
    {
        std::uint64_t state = mix(seed ^ 0x5eed5eed5eed5eedULL);
        for (std::uint64_t key : path) {
            state = mix(state ^ mix(key + 0x9e3779b97f4a7c15ULL));
        }
        return state;
    }

private:
    // splitmix64 finalizer
    static std::uint64_t mix(std::uint64_t z)
    {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::mt19937_64 engine_;
};

}  // namespace sdlg
