#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace blastlab {

/// Deterministic random source used everywhere in the repo.
///
/// Wraps std::mt19937_64 but implements its own draw functions so results do
/// not depend on the standard library's distribution internals. Copyable by
/// value, which is what makes bit-exact environment snapshots possible.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n). Rejection sampling, so the draw count can
  /// vary but the result stream is fully determined by the engine state.
  int uniform_int(int n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v = eng_();
    while (v >= limit) v = eng_();
    return static_cast<int>(v % bound);
  }

  /// Standard normal via Box-Muller (no cached spare, keeps state minimal).
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Derive an independent stream for a named purpose. Streams for distinct
  /// tags are decorrelated through a splitmix64 scramble of (seed, tag).
  Rng child(std::uint64_t tag) const {
    std::uint64_t x = seed_ ^ (0x9E3779B97F4A7C15ULL * (tag + 1));
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return Rng(x);
  }

  std::uint64_t seed() const { return seed_; }

  bool operator==(const Rng& other) const { return eng_ == other.eng_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
};

/// Fixed tags for the repo's named streams (documented so runs are auditable).
namespace rng_tags {
inline constexpr std::uint64_t kEnv = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kExplore = 3;
inline constexpr std::uint64_t kSampler = 4;
inline constexpr std::uint64_t kPoison = 5;
inline constexpr std::uint64_t kEvalEpisode = 6;
inline constexpr std::uint64_t kCollect = 7;
inline constexpr std::uint64_t kDetect = 8;
}  // namespace rng_tags

}  // namespace blastlab
