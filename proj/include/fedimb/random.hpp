#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <vector>

namespace fedimb {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to turn (seed, stream ids...) into independent
// generator seeds so parallel work is schedule-independent.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> streams) noexcept {
  std::uint64_t h = mix64(seed);
  for (auto s : streams) h = mix64(h ^ mix64(s + 0x632BE59BD9B4E019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t seed,
                    std::initializer_list<std::uint64_t> streams = {}) {
  return Rng(derive_seed(seed, streams));
}

// Uniform integer in [0, bound). Rejection sampling keeps it unbiased and
// independent of the standard library's distribution implementation.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) {
  const std::uint64_t limit = Rng::max() - (Rng::max() % bound);
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

// Fisher-Yates.
template <typename T>
void shuffle_in_place(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

inline std::vector<std::size_t> shuffled_iota(std::size_t n, Rng& rng) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  shuffle_in_place(std::span<std::size_t>(v), rng);
  return v;
}

// k distinct positions of [0, n) uniformly at random, in draw order
// (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k,
                                                           Rng& rng) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_below(rng, n - i));
    std::swap(v[i], v[j]);
  }
  v.resize(k);
  return v;
}

// Symmetric Dirichlet(alpha * 1_dim) via normalized Gamma draws. For very
// small alpha every Gamma draw can underflow to zero; the result is then the
// zero vector and callers must handle it.
inline std::vector<double> sample_dirichlet(std::size_t dim, double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> out(dim);
  double total = 0.0;
  for (auto& x : out) {
    x = gamma(rng);
    total += x;
  }
  if (total > 0.0)
    for (auto& x : out) x /= total;
  return out;
}

} // namespace fedimb
