#include "unirep/rng.hpp"

#include <cmath>
#include <numbers>

#include "unirep/common.hpp"

namespace unirep {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_stream(std::uint64_t seed, std::string_view purpose) {
  std::uint64_t state = seed ^ 0x736f6d6570736575ULL;
  std::uint64_t h = splitmix64(state);
  for (unsigned char c : purpose) {
    state ^= h ^ c;
    h = splitmix64(state);
  }
  return h;
}

Rng::Rng(std::uint64_t seed) : gen_(seed) {}

Rng Rng::stream(std::uint64_t seed, std::string_view purpose) {
  return Rng(hash_stream(seed, purpose));
}

std::uint64_t Rng::next_u64() { return gen_(); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  // Box-Muller, one value per call; u1 in (0,1] avoids log(0).
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) fail(errc::invalid_argument, "Rng::below: n must be positive");
  std::uint64_t span = static_cast<std::uint64_t>(n);
  // Rejection sampling to remove modulo bias.
  std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::size_t>(x % span);
}

std::size_t Rng::range_inclusive(std::size_t lo, std::size_t hi) {
  if (hi < lo) fail(errc::invalid_argument, "Rng::range_inclusive: hi < lo");
  return lo + below(hi - lo + 1);
}

std::vector<std::size_t> Rng::pick(std::size_t n, std::size_t k) {
  if (k > n) fail(errc::invalid_argument, "Rng::pick: k > n");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + below(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace unirep
