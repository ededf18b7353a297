#include "defrec/rng.hpp"

#include <numeric>

#include "defrec/errors.hpp"

namespace defrec {

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t h = mix64(parent ^ 0x6a09e667f3bcc909ULL);
  for (std::uint64_t id : path) h = mix64(h ^ mix64(id + 0x3c6ef372fe94f82bULL));
  return h;
}

double uniform01(Rng& rng) {
  // 53 random mantissa bits; independent of the standard library's distribution code.
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) throw InvalidArgument("uniform_index over empty range");
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(rng);
}

double sample_beta(Rng& rng, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw InvalidArgument("beta parameters must be positive");
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  if (x + y <= 0.0) return 0.5;
  return x / (x + y);
}

std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t m) {
  if (m > n) throw InvalidArgument("cannot sample more items than available");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t j = i + uniform_index(rng, n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(m);
  return pool;
}

std::vector<std::size_t> shuffled_indices(Rng& rng, std::size_t n) {
  return sample_without_replacement(rng, n, n);
}

}  // namespace defrec
