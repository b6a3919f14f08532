#pragma once

#include <cstdint>
#include <random>

namespace icl {

/// Seed stream threaded explicitly through every generator. A single stream
/// must be consumed sequentially; independent work gets its own stream from
/// derive_seed.
using Rng = std::mt19937_64;

// splitmix64 finalizer; turns (base, tag, index) into a decorrelated seed.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag,
                                    std::uint64_t index = 0) noexcept {
    return mix64(mix64(mix64(base) ^ tag) + index);
}

// Stream tags. Fixed values so derived seeds never change between releases.
namespace stream {
inline constexpr std::uint64_t basis = 0x62617369;
inline constexpr std::uint64_t init = 0x696e6974;
inline constexpr std::uint64_t train = 0x74726169;
inline constexpr std::uint64_t eval = 0x6576616c;
inline constexpr std::uint64_t tasks = 0x7461736b;
inline constexpr std::uint64_t prune = 0x7072756e;
inline constexpr std::uint64_t grad = 0x67726164;
}  // namespace stream

inline Rng make_rng(std::uint64_t base, std::uint64_t tag, std::uint64_t index = 0) {
    return Rng(derive_seed(base, tag, index));
}

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double sigma) {
    return std::normal_distribution<double>(0.0, sigma)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline int fair_sign(Rng& rng) { return std::bernoulli_distribution(0.5)(rng) ? 1 : -1; }

}  // namespace icl
