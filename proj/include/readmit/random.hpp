#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

// Portable random helpers. The standard distributions are implementation
// defined, so everything that feeds reproducible output goes through here.
namespace readmit::rng {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename... Rest>
std::uint64_t derive(std::uint64_t seed, Rest... rest) {
    std::uint64_t h = splitmix64(seed);
    ((h = splitmix64(h ^ static_cast<std::uint64_t>(rest))), ...);
    return h;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Engine& e) {
    return static_cast<double>(e() >> 11) * 0x1.0p-53;
}

inline double uniform(Engine& e, double lo, double hi) {
    return lo + (hi - lo) * uniform01(e);
}

/// Unbiased integer in [0, n) by rejection.
inline std::uint64_t below(Engine& e, std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = e();
    } while (x >= limit);
    return x % n;
}

/// Integer in [lo, hi].
inline std::int64_t between(Engine& e, std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(e, static_cast<std::uint64_t>(hi - lo + 1)));
}

inline bool bernoulli(Engine& e, double p) {
    return uniform01(e) < p;
}

/// Box-Muller, one draw per call.
inline double normal(Engine& e) {
    double u1 = uniform01(e);
    while (u1 <= 0.0) u1 = uniform01(e);
    const double u2 = uniform01(e);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename T>
void shuffle(std::vector<T>& v, Engine& e) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = below(e, i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace readmit::rng
