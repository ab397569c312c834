#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mlwc {

/// Deterministic random stream with hand-rolled distributions so draws are
/// identical across platforms and standard libraries.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes exactly two uniforms.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  /// Uniform integer in [0, n); rejection sampling, no modulo bias.
  int uniform_int(int n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return static_cast<int>(v % bound);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (int i = static_cast<int>(items.size()) - 1; i > 0; --i) {
      std::swap(items[static_cast<size_t>(i)], items[static_cast<size_t>(uniform_int(i + 1))]);
    }
  }

  /// First n elements of a shuffled [0, pool) index range.
  std::vector<int> sample_without_replacement(int pool, int n);

  /// Child stream with a seed mixed from this stream's seed path.
  static RngStream substream(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer; used to derive substream seeds.
std::uint64_t mix_u64(std::uint64_t x);

}  // namespace mlwc
