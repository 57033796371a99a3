#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fplab {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives a child seed from a base seed and a list of stream tags.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) noexcept {
    std::uint64_t s = mix_seed(base);
    for (auto t : tags) s = mix_seed(s ^ mix_seed(t + 0x632be59bd9b4e019ULL));
    return s;
}

// Stream tags, so different consumers of one experiment seed never share a stream.
namespace stream {
inline constexpr std::uint64_t sampling = 1;
inline constexpr std::uint64_t local_train = 2;
inline constexpr std::uint64_t init = 3;
inline constexpr std::uint64_t partition = 4;
inline constexpr std::uint64_t malicious = 5;
inline constexpr std::uint64_t psg = 6;
inline constexpr std::uint64_t poison = 7;
inline constexpr std::uint64_t defense = 8;
inline constexpr std::uint64_t data = 9;
inline constexpr std::uint64_t mix = 10;
}  // namespace stream

}  // namespace fplab
