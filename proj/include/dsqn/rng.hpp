#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "dsqn/check.hpp"

namespace dsqn {

inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// xoshiro256** with a splitmix64-expanded seed. State is four words that can
// be captured and restored exactly, which is what checkpoint resume relies on.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Fixed-point multiply keeps the draw count at
  // exactly one word per call, so replay of a state stream is unambiguous.
  int uniform_int(int n) {
    DSQN_REQUIRE(n > 0, "uniform_int needs a positive range");
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                             static_cast<unsigned __int128>(n)) >>
                            64);
  }

  State state() const { return s_; }
  void set_state(const State& s) { s_ = s; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  State s_{};
};

// Derives independent named streams from one root seed. Stream identity
// depends only on (root, name), so adding a consumer elsewhere never shifts
// the draws an existing consumer sees.
class RngFabric {
 public:
  explicit RngFabric(std::uint64_t root_seed) : root_(root_seed) {}

  Rng stream(std::string_view name) const {
    std::uint64_t x = root_ ^ fnv1a64(name);
    return Rng(splitmix64(x));
  }

  std::uint64_t root() const { return root_; }

 private:
  std::uint64_t root_;
};

}  // namespace dsqn
