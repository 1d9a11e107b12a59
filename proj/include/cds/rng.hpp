#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "cds/types.hpp"

namespace cds {

// All randomness in a run flows from one root seed.  Substreams are derived
// by name (and an optional index) so that e.g. data generation and training
// draw from independent, reproducible streams.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Deterministic substream: same (root, name, index) always yields the same engine.
inline std::mt19937_64 substream(std::uint64_t root, std::string_view name, std::uint64_t index = 0) {
    std::uint64_t s = splitmix64(root ^ fnv1a(name));
    s = splitmix64(s ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
    return std::mt19937_64(s);
}

/// Uniform double in [0, 1).  Hand-rolled so the byte stream does not depend
/// on standard-library distribution internals.
inline scalar_t uniform01(std::mt19937_64& g) {
    return static_cast<scalar_t>(g() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n).
inline index_t uniform_index(std::mt19937_64& g, index_t n) {
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % un;
    std::uint64_t v = g();
    while (v >= limit) v = g();
    return static_cast<index_t>(v % un);
}

/// Sample an index from a probability row (CDF walk; probabilities must sum to ~1).
template <typename Row>
index_t sample_row(std::mt19937_64& g, const Row& probs) {
    const scalar_t u = uniform01(g);
    scalar_t acc = 0.0;
    const index_t n = probs.size();
    for (index_t i = 0; i < n; ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    // Guard against rounding drift at the top of the CDF.
    for (index_t i = n - 1; i >= 0; --i)
        if (probs[i] > 0.0) return i;
    return n - 1;
}

/// In-place Fisher-Yates shuffle using the substream engine.
template <typename Vec>
void shuffle_indices(std::mt19937_64& g, Vec& v) {
    for (index_t i = static_cast<index_t>(v.size()) - 1; i > 0; --i) {
        const index_t j = uniform_index(g, i + 1);
        std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
}

}  // namespace cds
