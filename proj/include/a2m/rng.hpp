#pragma once

#include <cstdint>
#include <random>

namespace a2m {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) noexcept {
  return mix_seed(mix_seed(base) ^ (salt * 0xD6E8FEB86659FD93ull));
}

/// Uniform on [lo, hi) from the top 53 bits of one engine draw.
inline double uniform(Rng& rng, double lo, double hi) noexcept {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

// Salts for the independent streams a run draws from.
namespace seed_salt {
inline constexpr std::uint64_t embedding_init = 1;
inline constexpr std::uint64_t head_init = 2;
inline constexpr std::uint64_t mlp_head = 3;
inline constexpr std::uint64_t train_episode = 4;
inline constexpr std::uint64_t eval_episode = 5;
inline constexpr std::uint64_t val_episode = 6;
inline constexpr std::uint64_t eval_data = 7;
inline constexpr std::uint64_t val_data = 8;
inline constexpr std::uint64_t class_split = 9;
}  // namespace seed_salt

}  // namespace a2m
