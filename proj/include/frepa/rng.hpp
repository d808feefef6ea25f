#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace frepa {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stream tags used when deriving generator keys. Keep values stable:
/// changing them changes every seeded artifact.
enum class Stream : std::uint64_t {
  init = 1,
  corrupt = 2,
  shuffle = 3,
  flip_rotate = 4,
  probe = 5,
  synthetic = 6,
  branch_override = 7,
};

/// Counter-based generator. The output at position n is a pure function of
/// (key, n), so a (key, counter) pair fully describes the generator state
/// and independent streams are derived by hashing path components into the
/// key instead of advancing a shared state.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : key_(splitmix64(seed ^ 0x6a09e667f3bcc908ULL)) {}

  CounterRng(std::uint64_t seed, std::initializer_list<std::uint64_t> path) : CounterRng(seed) {
    for (std::uint64_t p : path) key_ = splitmix64(key_ ^ splitmix64(p + 0x3c6ef372fe94f82bULL));
  }

  static CounterRng from_state(std::uint64_t key, std::uint64_t counter) {
    CounterRng r(0);
    r.key_ = key;
    r.counter_ = counter;
    return r;
  }

  /// Child generator with an independent key; does not consume draws.
  CounterRng fork(std::uint64_t tag) const {
    return from_state(splitmix64(key_ ^ splitmix64(tag + 0xa54ff53a5f1d36f1ULL)), 0);
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    std::uint64_t x = key_ + (counter_++) * 0xd1b54a32d192ed03ULL;
    return splitmix64(splitmix64(x) ^ key_);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n) by rejection (unbiased).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do x = next_u64();
    while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal() {
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace frepa
