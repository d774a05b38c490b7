#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace candlab {

// std::mt19937_64 has a fully specified output sequence; the distributions
// below are hand-written so streams are identical across standard libraries.
using Rng = std::mt19937_64;

std::uint64_t fnv1a64(std::string_view text) noexcept;

/// Child seed for a named sub-module: global seed XOR FNV-1a(name).
inline std::uint64_t derive_seed(std::uint64_t global, std::string_view module) noexcept {
  return global ^ fnv1a64(module);
}

/// Uniform integer in [0, n). n must be positive.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

/// Uniform real in [0, 1) with 53 random bits.
double uniform_real(Rng& rng);

/// Standard normal deviate (Box-Muller, one value per call).
double standard_normal(Rng& rng);

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  shuffle(std::span<T>(items), rng);
}

/// `count` distinct indices drawn uniformly from [0, n), in draw order.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, Rng& rng);

}  // namespace candlab
