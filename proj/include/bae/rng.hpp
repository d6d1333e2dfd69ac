// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace bae {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Purpose tags keep substreams for different consumers independent.
enum class Stream : std::uint64_t {
    Paths = 1,
    Noise = 2,
    Split = 3,
    Init = 4,
    Shuffle = 5,
    Lsh = 6,
    NoiseSweep = 7,
};

/// Independent generator keyed by (seed, purpose, counter). Results depend only on
/// the key, so per-UE work can run in any order or on any thread.
inline Rng substream(std::uint64_t seed, Stream purpose, std::uint64_t counter = 0) {
    std::uint64_t key = mix64(seed);
    key = mix64(key ^ static_cast<std::uint64_t>(purpose));
    key = mix64(key ^ counter);
    return Rng(key);
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace bae
