#include "mlwc/rng.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mlwc {

std::uint64_t mix_u64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<int> RngStream::sample_without_replacement(int pool, int n) {
  if (n > pool) throw std::invalid_argument("sample_without_replacement: n exceeds pool");
  std::vector<int> idx(static_cast<size_t>(pool));
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates from the front.
  for (int i = 0; i < n; ++i) {
    const int j = i + uniform_int(pool - i);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(n));
  return idx;
}

RngStream RngStream::substream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix_u64(seed);
  for (std::uint64_t p : path) s = mix_u64(s ^ mix_u64(p));
  return RngStream(s);
}

}  // namespace mlwc
