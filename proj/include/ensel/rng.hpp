#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace ensel {

// Deterministic RNG helpers. mt19937_64's output sequence is fixed by the
// standard, but std::uniform_*_distribution and std::shuffle are
// implementation-defined, so the derived draws are done by hand here to keep
// "same seed -> bit-identical result" true across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [lo, hi) from the top 53 bits.
  double uniform(double lo, double hi) {
    const double unit = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return lo + unit * (hi - lo);
  }

  // Uniform in {0, ..., n-1}, rejection-sampled to avoid modulo bias.
  std::size_t index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return static_cast<std::size_t>(r % span);
  }

  // Fisher-Yates, iterating from the back.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ensel
