#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

// Randomness helpers. std::mt19937_64 output is pinned by the standard, but
// the std::*_distribution adaptors are not, so every draw used by the library
// goes through the functions below to keep results identical across
// standard-library implementations.

namespace poleinspect::rng {

using Engine = std::mt19937_64;

/// Mixes a seed with a stream id so derived streams are decorrelated
/// (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Unbiased integer in [0, n). n must be nonzero.
inline std::uint64_t uniform_index(Engine& rng, std::uint64_t n) {
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t limit = max - max % n;
    std::uint64_t x = rng();
    while (x >= limit) x = rng();
    return x % n;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Engine& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform double in [lo, hi).
inline double uniform(Engine& rng, double lo, double hi) {
    return lo + uniform01(rng) * (hi - lo);
}

/// Uniform integer in [lo, hi] inclusive.
inline std::int64_t uniform_int(Engine& rng, std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(
                    uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

/// Standard normal draw via Box-Muller. Consumes exactly two engine draws.
inline double normal01(Engine& rng) {
    const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
}

/// In-place Fisher-Yates shuffle.
template <typename T>
void shuffle(std::vector<T>& v, Engine& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

/// k distinct indices drawn uniformly from [0, n), in draw order.
inline std::vector<std::size_t> sample_indices(Engine& rng, std::size_t n,
                                               std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j =
            i + static_cast<std::size_t>(uniform_index(rng, n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

}  // namespace poleinspect::rng
