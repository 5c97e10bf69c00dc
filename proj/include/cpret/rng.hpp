#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace cpret {

// std::mt19937_64 is fully specified by the standard; the distributions in
// <random> are not. Everything that must be reproducible across toolchains
// draws through the helpers below.
using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// FNV-1a, 64 bit.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xCBF29CE484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return Rng(splitmix64(seed ^ splitmix64(stream)));
}

// Uniform double in [0, 1).
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n), unbiased. n must be > 0.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t r;
    do {
        r = rng();
    } while (r >= limit);
    return r % n;
}

inline bool bernoulli(Rng& rng, double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return uniform01(rng) < p;
}

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = uniform_index(rng, i);
        std::swap(items[i - 1], items[j]);
    }
}

template <typename Container>
void shuffle(Container& items, Rng& rng) {
    shuffle(std::span(items.data(), items.size()), rng);
}

}  // namespace cpret
