#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ncc {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Counter-based seed derivation: the result depends only on the master seed
// and the counter path, never on call order.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t s = mix64(master);
    for (auto c : path) s = mix64(s ^ mix64(c + 0x632be59bd9b4e019ULL));
    return s;
}

// Stream tags used when splitting a replication seed.
enum class Stream : std::uint64_t {
    schedule = 1,
    lambdas = 2,
    responses = 3,
    method = 4,
};

inline std::uint64_t stream_seed(std::uint64_t seed, Stream s, std::uint64_t sub = 0) noexcept {
    return derive_seed(seed, {static_cast<std::uint64_t>(s), sub});
}

}  // namespace ncc
