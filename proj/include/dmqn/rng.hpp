#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <type_traits>

namespace dmqn {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// 64-bit FNV-1a, used to key streams by name.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed for a sub-stream identified by a path of integers (e.g. {seed, epoch, instance}).
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (auto v : path) h = mix64(h ^ mix64(v));
    return h;
}

// std::*_distribution output is implementation-defined; these conversions are
// fixed so generated data and noise are identical across standard libraries.

/// Uniform in the open interval (0, 1).
inline double uniform01(Rng& rng) { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; }

/// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

/// Standard normal via Box-Muller.
inline double normal(Rng& rng) {
    const double u1 = uniform01(rng), u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Gumbel(0, 1) sample: -log(-log(u)).
inline double gumbel(Rng& rng) { return -std::log(-std::log(uniform01(rng))); }

/// Fills `out` with Gumbel(0, 1) samples. For float, each 64-bit draw yields
/// two 23-bit uniforms strictly inside (0, 1).
template <class T>
void fill_gumbel(Rng& rng, std::span<T> out) {
    if constexpr (std::is_same_v<T, float>) {
        auto g = [](std::uint64_t bits) {
            const float u = (static_cast<float>(bits & 0x7fffff) + 0.5f) * 0x1.0p-23f;
            return -std::log(-std::log(u));
        };
        std::size_t i = 0;
        for (; i + 2 <= out.size(); i += 2) {
            const std::uint64_t r = rng();
            out[i] = g(r);
            out[i + 1] = g(r >> 32);
        }
        if (i < out.size()) out[i] = g(rng());
    } else {
        for (auto& v : out) v = static_cast<T>(gumbel(rng));
    }
}

}  // namespace dmqn
