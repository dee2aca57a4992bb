#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace llmar {

// Derives a stable component seed from a master seed via 64-bit FNV-1a.
// Keeping every consumer on its own derived stream means adding or removing
// one consumer never shifts the draws seen by another.
inline std::uint64_t seed_for(std::uint64_t master, std::string_view tag, std::uint64_t index = 0) {
    std::uint64_t h = 14695981039346656037ULL;
    auto mix = [&h](std::uint8_t byte) {
        h ^= byte;
        h *= 1099511628211ULL;
    };
    for (int i = 0; i < 8; ++i) mix(static_cast<std::uint8_t>(master >> (8 * i)));
    for (char c : tag) mix(static_cast<std::uint8_t>(c));
    for (int i = 0; i < 8; ++i) mix(static_cast<std::uint8_t>(index >> (8 * i)));
    return h;
}

// Uniform double in [0, 1) from the top 53 bits of the generator output.
// std::uniform_real_distribution is implementation-defined, so replay
// artifacts would not be portable across standard libraries.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline bool bernoulli(std::mt19937_64& rng, double p) {
    return uniform01(rng) < p;
}

// Uniform integer in [0, n) by rejection, n >= 1.
inline std::uint64_t below(std::mt19937_64& rng, std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

// Fisher-Yates with explicit draws; std::shuffle is implementation-defined.
template <typename T>
void shuffle_seeded(std::vector<T>& values, std::mt19937_64& rng) {
    for (std::size_t i = values.size(); i > 1; --i) {
        std::swap(values[i - 1], values[below(rng, i)]);
    }
}

}  // namespace llmar
