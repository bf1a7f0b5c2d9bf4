#ifndef MUSEREC_RNG_HPP
#define MUSEREC_RNG_HPP

#include <cstdint>
#include <string>
#include <string_view>

namespace muserec {

/// Deterministic 64-bit generator (splitmix64 stream). The standard library
/// distributions are implementation-defined, so every draw the project makes
/// goes through this type to keep runs bit-identical across platforms.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1). 53 mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller. Two draws per pair, one cached.
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// FNV-1a over a label, mixed with the base seed. Used to fan one global
/// seed out into stable per-stage seeds.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stage);

}  // namespace muserec

#endif
