#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace guild::nn {

/// Counter-based deterministic random stream. Streams are identified by a
/// 64-bit key; `split(name)` derives an independent child stream from the
/// parent key and the name, so subsystems can pull randomness in any order
/// without perturbing each other.
class Rng {
 public:
  explicit Rng(uint64_t seed) : key_(mix(seed ^ 0x5851f42d4c957f2dULL)) {}

  Rng split(std::string_view name) const;
  Rng split(uint64_t index) const;

  uint64_t next_u64() { return mix(key_ ^ (0x9e3779b97f4a7c15ULL * ++counter_)); }

  /// Uniform in [0, 1) with 24 bits of mantissa.
  float uniform() { return float(next_u64() >> 40) * 0x1.0p-24f; }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  int uniform_int(int n);

  /// Index sampled from unnormalized non-negative weights.
  int sample_weighted(const std::vector<float>& weights);

  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

/// FNV-1a over bytes; used for stream naming and content hashes.
uint64_t fnv1a(std::string_view bytes, uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace guild::nn
