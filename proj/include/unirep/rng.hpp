#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace unirep {

// Deterministic random source. All randomness in a run flows from one u64
// seed through named streams (stream state = hash(seed, purpose)), so adding
// a new consumer never perturbs existing streams. Distributions are
// implemented by hand on top of mt19937_64 to keep the byte stream identical
// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  static Rng stream(std::uint64_t seed, std::string_view purpose);

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller.
  double normal();
  // Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);
  // Uniform integer in [lo, hi], inclusive.
  std::size_t range_inclusive(std::size_t lo, std::size_t hi);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
      std::size_t j = below(i + 1);
      std::swap(items[i], items[j]);
    }
  }

  // k distinct values from [0, n), in random order.
  std::vector<std::size_t> pick(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 gen_;
};

// SplitMix64 mix step; used for seed derivation and stream splitting.
std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t hash_stream(std::uint64_t seed, std::string_view purpose);

}  // namespace unirep
