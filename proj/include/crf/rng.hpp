#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>

namespace crf {

// Counter-based mixing and the positional seed hierarchy.
//
// Every random quantity in the library is a pure function of a 64-bit seed
// and a position (tree index, replicate index, node index, ...). Child seeds
// are derived as derive_seed(parent, tag), so results never depend on the
// order in which workers execute.

/// SplitMix64 finalizer; a bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) noexcept {
  return mix64(parent ^ mix64(tag ^ 0x6a09e667f3bcc909ULL));
}

template <class... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag, Tags... rest) noexcept {
  return derive_seed(derive_seed(parent, tag), static_cast<std::uint64_t>(rest)...);
}

/// Top 53 bits of a word mapped to [0, 1).
constexpr double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Sequential stream used inside a single replicate.
using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed) { return Engine{mix64(seed)}; }

inline double uniform01(Engine& engine) { return to_unit(engine()); }

/// Uniform integer in [0, n) by multiply-shift (bias below 2^-64 * n).
inline std::size_t uniform_index(Engine& engine, std::size_t n) {
  __extension__ using u128 = unsigned __int128;
  const u128 wide = static_cast<u128>(engine()) * n;
  return static_cast<std::size_t>(wide >> 64);
}

/// Standard normal via Box-Muller; written out so streams do not depend on
/// the standard library's distribution implementation.
inline double standard_normal(Engine& engine) {
  const double u1 = 1.0 - uniform01(engine);  // (0, 1]
  const double u2 = uniform01(engine);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace crf
