#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace fedmem {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent stream seed from a master seed and a sequence of
// integer coordinates (client id, round, ...). A tag keeps unrelated streams
// apart even when their coordinates coincide.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::initializer_list<std::int64_t> coords = {}) {
  std::uint64_t h = splitmix64(master ^ fnv1a64(tag));
  for (std::int64_t c : coords) h = splitmix64(h ^ static_cast<std::uint64_t>(c) * 0xd6e8feb86659fd93ULL);
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return normal_(engine_); }
  double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(engine_); }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), engine_);
  }

  std::vector<double> dirichlet(std::size_t k, double alpha) {
    std::vector<double> p(k);
    double sum = 0.0;
    for (auto& x : p) {
      x = gamma(alpha);
      sum += x;
    }
    if (sum <= 0.0) {
      // Every draw underflowed (tiny alpha); the limit is a vertex of the simplex.
      std::fill(p.begin(), p.end(), 0.0);
      p[index(k)] = 1.0;
      return p;
    }
    for (auto& x : p) x /= sum;
    return p;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// Largest-remainder apportionment of `total` units by nonnegative `shares`.
// Ties in the remainder go to the lower index. Shares need not be normalized.
inline std::vector<std::size_t> apportion(std::span<const double> shares, std::size_t total) {
  std::vector<std::size_t> counts(shares.size(), 0);
  double sum = 0.0;
  for (double s : shares) sum += s;
  if (shares.empty() || sum <= 0.0) return counts;
  std::vector<std::pair<double, std::size_t>> rem;
  rem.reserve(shares.size());
  std::size_t given = 0;
  for (std::size_t i = 0; i < shares.size(); ++i) {
    const double exact = static_cast<double>(total) * shares[i] / sum;
    counts[i] = static_cast<std::size_t>(exact);
    given += counts[i];
    rem.emplace_back(exact - static_cast<double>(counts[i]), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; given < total; j = (j + 1) % rem.size()) {
    if (shares[rem[j].second] <= 0.0) continue;
    counts[rem[j].second] += 1;
    ++given;
  }
  return counts;
}

}  // namespace fedmem
