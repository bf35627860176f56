#pragma once

#include <cmath>
#include <cstdint>

#include "permreg/errors.hpp"

namespace permreg {

// Counter-based pseudo random stream.  A stream is identified by a (seed,
// stream id) pair; two RngStream objects constructed with the same pair
// produce identical output forever, independent of call interleaving in
// other streams.  This is what makes candidate draws, Monte Carlo
// calibration and scenario replications reproducible under any thread
// schedule: every parallel work item owns a stream derived from its index.
//
// The generator is the splitmix64 finalizer applied to key + counter, which
// passes standard statistical batteries and has a period of 2^64 per stream.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}

  RngStream(std::uint64_t seed, std::uint64_t stream)
      : key_(derive_key(seed, stream)), counter_(0), cached_(false), cache_(0.0) {}

  // Child stream with an independent key.  Chained forks stay independent:
  // fork(a).fork(b) differs from fork(b).fork(a) for a != b.
  RngStream fork(std::uint64_t id) const {
    RngStream child;
    child.key_ = mix(key_ ^ mix(id + 0x6a09e667f3bcc909ULL));
    child.counter_ = 0;
    child.cached_ = false;
    return child;
  }

  std::uint64_t next_u64() {
    ++counter_;
    return mix(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  // Uniform on the open interval (0, 1); never returns an endpoint, so it is
  // safe inside log() for the Gaussian transform below.
  double next_uniform() {
    const std::uint64_t bits = next_u64() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  // Uniform integer in [0, bound), exact (rejection sampling, no modulo bias).
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound == 0) throw DomainError("next_below: bound must be positive");
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double next_gaussian() {
    if (cached_) {
      cached_ = false;
      return cache_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    cache_ = radius * std::sin(angle);
    cached_ = true;
    return radius * std::cos(angle);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  static std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream) {
    return mix(mix(seed + 0x9e3779b97f4a7c15ULL) ^ mix(stream + 0xd1b54a32d192ed03ULL));
  }

  std::uint64_t key_;
  std::uint64_t counter_;
  bool cached_;
  double cache_;
};

}  // namespace permreg
