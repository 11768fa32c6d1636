#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dagvi {

// Deterministic RNG. All distribution transforms are written out here instead
// of going through std:: distributions, so streams are bit-reproducible for a
// given seed regardless of standard-library version.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(mix(seed)), seed_hash_(mix(seed)) {}

  // Uniform in [0, 1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform in the open interval (0, 1); safe input for log().
  double uniform_open() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; generates pairs and caches the second.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform_open();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Standard Gumbel: -log(-log(U)), U in (0,1).
  double gumbel() { return -std::log(-std::log(uniform_open())); }

  // Uniform integer in [0, n). Modulo bias is ~n/2^64, irrelevant here.
  std::uint64_t integer(std::uint64_t n) { return gen_() % n; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(integer(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derived independent stream; forking never advances this generator.
  Rng fork(std::uint64_t stream) const {
    return Rng(seed_hash_ ^ mix(stream + 0x9e3779b97f4a7c15ull));
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 gen_;
  std::uint64_t seed_hash_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace dagvi
