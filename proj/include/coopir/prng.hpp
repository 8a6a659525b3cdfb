#pragma once

#include <cstdint>

namespace coopir {

// SplitMix64 generator. The whole state is one 64-bit word, so copying a Prng
// forks the stream.
class Prng {
 public:
  explicit Prng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64();
  // 53-bit uniform in [0,1).
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi], unbiased (rejection sampling).
  int uniform_int(int lo, int hi);
  // Standard normal via Box-Muller; consumes two draws, keeps no cache.
  double normal();

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

// One SplitMix64 output for a given state value; used to derive child seeds.
std::uint64_t splitmix64(std::uint64_t x);

// Seed of the idx-th item under a base seed: splitmix64(base ^ idx).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t idx) { return splitmix64(base ^ idx); }

}  // namespace coopir
