#pragma once

#include <cmath>
#include <cstdint>

namespace deskpose {

// SplitMix64 sequence generator. All randomness in the project flows through
// this class so results are bit-reproducible; the <random> distributions are
// implementation-defined and would not be.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t state) : state_(state) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Integer in [0, n); n > 0.
  uint64_t next_below(uint64_t n) {
    return static_cast<uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller; the second draw of each pair is cached.
  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - next_double();  // (0, 1], keeps the log finite
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stream labels. Streams keyed by (seed, label, ids) are independent, so
// per-entity noise does not depend on the order entities are visited in.
enum class Stream : uint64_t {
  kScenePoint = 1,
  kCameraPose = 2,
  kKeypointNoise = 3,
  kDescriptorNoise = 4,
  kClutter = 5,
  kTrackSample = 6,
  kWeightInit = 7,
  kRansac = 8,
  kTrainBatch = 9,
  kKMeans = 10,
  kGradCheck = 11,
  kEval = 12,
};

namespace detail {
inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace detail

inline SplitMix64 stream_rng(uint64_t seed, Stream label, uint64_t id0 = 0, uint64_t id1 = 0) {
  uint64_t s = detail::mix64(seed + 0x632BE59BD9B4E019ull);
  s = detail::mix64(s ^ (static_cast<uint64_t>(label) * 0x9E3779B97F4A7C15ull));
  s = detail::mix64(s ^ (id0 * 0xC2B2AE3D27D4EB4Full));
  s = detail::mix64(s ^ (id1 * 0x165667B19E3779F9ull));
  return SplitMix64(s);
}

}  // namespace deskpose
