#pragma once

#include <cmath>
#include <cstdint>

namespace egnmt {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Counter-based generator: the i-th draw is a pure function of (key, i), and
// split() derives independent child streams without touching the parent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(splitmix64(seed)) {}

  Rng split(std::uint64_t stream) const {
    Rng child;
    child.key_ = splitmix64(key_ ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
    return child;
  }

  std::uint64_t next_u64() { return splitmix64(key_ + splitmix64(counter_++)); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace egnmt
