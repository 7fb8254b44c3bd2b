#pragma once

#include <cstdint>

namespace ziqe {

/// SplitMix64: 64-bit state advanced by 0x9E3779B97F4A7C15, output finalized
/// with the murmur3-style mix (xor-shift 30/27/31, multipliers
/// 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB). Every random stream in the
/// toolkit is one of these. All derived draws below use integer arithmetic
/// or exact double operations only, so streams reproduce across platforms.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by rejection; n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next();
    while (v >= limit) v = next();
    return v % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Approximate standard normal: Irwin-Hall sum of 12 uniforms minus 6.
  /// Pure additions, so bit-identical everywhere (unlike log/cos based
  /// transforms, which depend on the platform libm).
  double gaussian() {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += uniform();
    return s - 6.0;
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

/// Seed-splitting rule: stream `index` of root seed `root` is the first
/// output of SplitMix64(root ^ (index + 1) * 0xD1B54A32D192ED03).
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
  SplitMix64 g(root ^ ((index + 1) * 0xD1B54A32D192ED03ULL));
  return g.next();
}

}  // namespace ziqe
