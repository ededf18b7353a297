#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace defrec {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent child seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Child seed for a (parent, id...) path. Stable across platforms and worker counts.
std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> path) noexcept;

inline Rng make_rng(std::uint64_t seed) { return Rng(mix64(seed)); }

double uniform01(Rng& rng);
double standard_normal(Rng& rng);
std::size_t uniform_index(Rng& rng, std::size_t n);

/// Beta(a, b) via the ratio of two Gamma draws.
double sample_beta(Rng& rng, double a, double b);

/// m distinct indices from [0, n) in draw order (partial Fisher-Yates).
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t m);

std::vector<std::size_t> shuffled_indices(Rng& rng, std::size_t n);

}  // namespace defrec
