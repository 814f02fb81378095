#pragma once

#include <array>
#include <cstdint>

namespace hflow {

/// Philox4x32-10 block function (Salmon et al., "Parallel random numbers: as
/// easy as 1, 2, 3"). Pure function of (counter, key).
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

// Counter-based stream. Key = (seed low 32 bits, seed high 32 bits); counter =
// (block low, block high, stream low, stream high). Block b yields two 64-bit
// words, (x1 << 32 | x0) then (x3 << 32 | x2). The stream id keys independent
// substreams, e.g. one per (spec, sample index).
//
//   uniform(): (next_u64() >> 11) * 2^-53, in [0, 1)
//   normal():  Box-Muller on u1 = 1 - uniform(), u2 = uniform(),
//              sqrt(-2 ln u1) * cos(2 pi u2); consumes two words.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int next_ = 2;
};

}  // namespace hflow
