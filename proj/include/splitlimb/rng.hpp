#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

namespace splitlimb {

// SplitMix64 finalizer. Used to expand a user seed into generator state and
// to derive independent sub-streams from (seed, tag, index) tuples.
constexpr std::uint64_t splitmix64(std::uint64_t& x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Folds a list of words into one seed; order matters.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t x = seed;
  std::uint64_t out = splitmix64(x);
  for (std::uint64_t t : tags) {
    x ^= t + 0x632BE59BD9B4E019ull + (out << 6) + (out >> 2);
    out = splitmix64(x);
  }
  return out;
}

/// PCG32 (XSH-RR, 64-bit LCG state, 32-bit output).
///
/// Seeding: `state` and `inc` come from two consecutive SplitMix64 outputs of
/// the seed; inc is forced odd; then one step is taken, as in the reference
/// `pcg32_srandom_r`. Any implementation following these steps reproduces the
/// stream exactly.
class Pcg32 {
 public:
  explicit constexpr Pcg32(std::uint64_t seed) noexcept {
    std::uint64_t x = seed;
    const std::uint64_t init_state = splitmix64(x);
    const std::uint64_t init_seq = splitmix64(x);
    state_ = 0;
    inc_ = (init_seq << 1u) | 1u;
    next_u32();
    state_ += init_state;
    next_u32();
  }

  constexpr std::uint32_t next_u32() noexcept {
    const std::uint64_t old = state_;
    state_ = old * 6364136223846793005ull + inc_;
    const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  constexpr std::uint64_t next_u64() noexcept {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Uniform in [0, 1) with 53 random bits (high word first).
  constexpr double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  constexpr double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, bound) by rejection; bound must be nonzero.
  constexpr std::uint32_t below(std::uint32_t bound) noexcept {
    const std::uint32_t threshold = (0u - bound) % bound;
    for (;;) {
      const std::uint32_t r = next_u32();
      if (r >= threshold) return r % bound;
    }
  }

  constexpr std::uint64_t state() const noexcept { return state_; }
  constexpr std::uint64_t increment() const noexcept { return inc_; }

  // UniformRandomBitGenerator surface, so <random> distributions also work.
  using result_type = std::uint32_t;
  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return 0xFFFFFFFFu; }
  constexpr result_type operator()() noexcept { return next_u32(); }

 private:
  std::uint64_t state_{};
  std::uint64_t inc_{};
};

using Rng = Pcg32;

// Fisher-Yates from the back; element i swaps with below(i + 1).
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng.below(static_cast<std::uint32_t>(i));
    std::swap(items[i - 1], items[j]);
  }
}

inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  shuffle(idx, rng);
  return idx;
}

}  // namespace splitlimb
