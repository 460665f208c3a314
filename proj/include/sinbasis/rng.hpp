#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace sinbasis {

/// Derives an independent stream seed from a root seed, a purpose tag and a
/// counter: splitmix64(root ^ fnv1a(purpose) ^ splitmix64(index)). Every random
/// draw in the project goes through one of these derived seeds, so changing how
/// many numbers one purpose consumes never shifts another.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0);

/// mt19937_64 bits with portable uniform/normal conversions (the standard
/// distributions are implementation-defined, which would break bit-exact
/// reruns across standard libraries).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace sinbasis
