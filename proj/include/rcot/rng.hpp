#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace rcot {

// All randomness in the project flows through this splitmix64 stream so that
// runs with the same seed produce byte-identical artifacts on any platform.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from (seed, tag). Used to hand each
// pipeline stage, rollout, or grid point its own stream.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t x = seed ^ (0x9E3779B97F4A7C15ULL * (tag + 0x632BE59BD9B4E019ULL));
  return splitmix64_next(x);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Lemire multiply-shift with rejection.
  std::uint64_t next_below(std::uint64_t n) {
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = -n % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next_u64()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Uniform in [lo, hi].
  double next_in(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_;
};

// Fixed tags for deriving per-stage streams from the master experiment seed.
namespace seed_tags {
inline constexpr std::uint64_t kPretrainData = 1;
inline constexpr std::uint64_t kTrainData = 2;
inline constexpr std::uint64_t kEvalTriggered = 3;
inline constexpr std::uint64_t kEvalClean = 4;
inline constexpr std::uint64_t kAttackPool = 5;
inline constexpr std::uint64_t kPretrainInit = 6;
inline constexpr std::uint64_t kAdapterInit = 7;
inline constexpr std::uint64_t kGrpo = 8;
inline constexpr std::uint64_t kEval = 9;
inline constexpr std::uint64_t kAttack = 10;
}  // namespace seed_tags

}  // namespace rcot
