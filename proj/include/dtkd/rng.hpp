#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace dtkd {

/// Portable SplitMix64 generator. Every random decision in the toolkit draws
/// from a stream derived with stream_seed(), so results do not depend on the
/// platform's <random> implementation.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive, rejection-sampled to avoid modulo bias.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<std::int64_t>(next());
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % range);
    std::uint64_t x = next();
    while (x >= limit) x = next();
    return lo + static_cast<std::int64_t>(x % range);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one value per call, second discarded).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t state_;
};

/// Operation tags used to separate random streams.
enum class StreamOp : std::uint64_t {
  shuffle = 1,
  dropout = 2,
  flip = 3,
  center_black = 4,
  quarter_black = 5,
  label_noise = 6,
  subset = 7,
  head_init = 8,
  param_init = 9,
  corruption_pick = 10,
  synthetic = 11,
  monte_carlo = 12,
};

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seed for the stream identified by (global seed, sample or step index, operation).
inline std::uint64_t stream_seed(std::uint64_t global_seed, std::uint64_t index, StreamOp op) {
  std::uint64_t h = mix64(global_seed + 0x9E3779B97F4A7C15ULL);
  h = mix64(h ^ (index + 0x632BE59BD9B4E019ULL));
  h = mix64(h ^ (static_cast<std::uint64_t>(op) * 0xD1B54A32D192ED03ULL));
  return h;
}

inline SplitMix64 make_stream(std::uint64_t global_seed, std::uint64_t index, StreamOp op) {
  return SplitMix64(stream_seed(global_seed, index, op));
}

/// Fisher-Yates permutation of [0, n).
inline std::vector<std::size_t> permutation(std::size_t n, SplitMix64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace dtkd
