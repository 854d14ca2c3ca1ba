#pragma once

#include <cstdint>
#include <limits>

namespace nmpg {

/// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based stream: the k-th output is mix64(key + (k + 1) * golden).
/// Substreams are derived by hashing a parent key with a tuple of indices, so
/// draws for (seed, step, group) never depend on evaluation order.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit constexpr RandomStream(std::uint64_t key) noexcept : key_(key) {}

  /// Stream keyed by (seed, a, b, c); use distinct `tag` values per purpose.
  static constexpr RandomStream derive(std::uint64_t seed, std::uint64_t tag,
                                       std::uint64_t a = 0, std::uint64_t b = 0) noexcept {
    std::uint64_t k = mix64(seed ^ 0x6a09e667f3bcc909ULL);
    k = mix64(k ^ (tag + 0x9e3779b97f4a7c15ULL));
    k = mix64(k ^ (a + 0xbb67ae8584caa73bULL));
    k = mix64(k ^ (b + 0x3c6ef372fe94f82bULL));
    return RandomStream(k);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  constexpr result_type operator()() noexcept {
    counter_ += 0x9e3779b97f4a7c15ULL;
    return mix64(key_ + counter_);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  constexpr double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n) by rejection; n must be positive.
  constexpr std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x = (*this)();
    while (x >= limit) x = (*this)();
    return x % n;
  }

  /// Standard normal via Box-Muller (one value per call).
  double normal() noexcept;

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Stream tags; each purpose gets its own family of substreams.
namespace stream_tag {
inline constexpr std::uint64_t kMaskSample = 1;
inline constexpr std::uint64_t kMinibatch = 2;
inline constexpr std::uint64_t kTaskData = 3;
inline constexpr std::uint64_t kEstimatorStats = 4;
inline constexpr std::uint64_t kInitMask = 5;
inline constexpr std::uint64_t kCalibration = 6;
inline constexpr std::uint64_t kVerify = 7;
inline constexpr std::uint64_t kSweep = 8;
}  // namespace stream_tag

}  // namespace nmpg
