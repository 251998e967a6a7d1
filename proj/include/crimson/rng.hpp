/**
 * @file rng.hpp
 * @brief Counter-based 64-bit generator shared by the bootstrap and the
 *        harness-level sampling.
 *
 * The generator is stateless: draw i under seed s is a pure function of
 * (s, i), so any consumer can evaluate draws in any order (or in parallel)
 * and still reproduce a sequential run bit for bit. The algorithm is written
 * out in docs/rng.md so other languages can reproduce identical streams.
 */
#pragma once

#include <cstdint>

namespace crimson {

/// 64-bit output for draw `index` under `seed`.
inline std::uint64_t rng_value(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + (index + 1) * 0x9E3779B97F4A7C15ULL;
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
}

/// Uniform double in [0, 1) from the top 53 bits of rng_value.
inline double rng_unit(std::uint64_t seed, std::uint64_t index) {
    return static_cast<double>(rng_value(seed, index) >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). n must be >= 1.
inline std::uint64_t rng_pick(std::uint64_t seed, std::uint64_t index,
                              std::uint64_t n) {
    auto k = static_cast<std::uint64_t>(rng_unit(seed, index) * static_cast<double>(n));
    return k >= n ? n - 1 : k;
}

/// Sequential view over the counter stream; convenience for fixture
/// generators that do not need random access.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t start = 0)
        : seed_(seed), next_(start) {}

    std::uint64_t value() { return rng_value(seed_, next_++); }
    double unit() { return rng_unit(seed_, next_++); }
    std::uint64_t pick(std::uint64_t n) { return rng_pick(seed_, next_++, n); }

private:
    std::uint64_t seed_;
    std::uint64_t next_;
};

}  // namespace crimson
