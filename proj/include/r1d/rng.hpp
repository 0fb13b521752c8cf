#pragma once

// Seeded randomness used across the library.
//
// Every random draw funnels through std::mt19937_64 plus the helpers below,
// so splits, upsampling, padding offsets and attacks are reproducible
// bit-for-bit from (seed, stream tag) on any conforming C++ implementation.
// std::uniform_*_distribution is deliberately avoided: its output is not
// pinned by the standard.

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace r1d::rng {

using Engine = std::mt19937_64;

// FNV-1a over arbitrary bytes; also used for config hashes and checksums.
inline std::uint64_t fnv1a(const void* bytes, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a(s.data(), s.size(), h);
}

// Derive an independent stream seed from a base seed and a tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
    std::uint64_t h = fnv1a(&seed, sizeof(seed));
    return fnv1a(tag, h);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
    std::uint64_t h = derive_seed(seed, tag);
    return fnv1a(&index, sizeof(index), h);
}

inline Engine make_engine(std::uint64_t seed) { return Engine(seed); }

// Uniform double in [0, 1) using the top 53 bits of one engine draw.
inline double uniform01(Engine& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

// Uniform double in [lo, hi).
inline double uniform(Engine& g, double lo, double hi) {
    return lo + (hi - lo) * uniform01(g);
}

// Uniform integer in [0, n). Rejection-free modulo; the bias is < n / 2^64
// and irrelevant next to the determinism requirement.
inline std::uint64_t uniform_index(Engine& g, std::uint64_t n) {
    return n == 0 ? 0 : g() % n;
}

// Standard normal via Box-Muller on the pinned uniform.
inline double normal(Engine& g) {
    double u1 = uniform01(g);
    double u2 = uniform01(g);
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// In-place Fisher-Yates shuffle with the pinned index draw.
template <typename T>
void shuffle(std::vector<T>& v, Engine& g) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(uniform_index(g, i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace r1d::rng
