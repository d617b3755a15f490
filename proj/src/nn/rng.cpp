#include "guild/nn/rng.hpp"

#include "guild/errors.hpp"

namespace guild::nn {

uint64_t fnv1a(std::string_view bytes, uint64_t seed) {
  uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng Rng::split(std::string_view name) const {
  Rng child(0);
  child.key_ = mix(key_ ^ fnv1a(name));
  child.counter_ = 0;
  return child;
}

Rng Rng::split(uint64_t index) const {
  Rng child(0);
  child.key_ = mix(key_ ^ mix(index ^ 0xa0761d6478bd642fULL));
  child.counter_ = 0;
  return child;
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw ContractError("Rng::uniform_int: n must be positive");
  // Rejection sampling to avoid modulo bias.
  uint64_t bound = uint64_t(n);
  uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  uint64_t r = next_u64();
  while (r >= limit) r = next_u64();
  return int(r % bound);
}

int Rng::sample_weighted(const std::vector<float>& weights) {
  double total = 0.0;
  for (float w : weights) {
    if (w < 0.0f) throw ContractError("Rng::sample_weighted: negative weight");
    total += w;
  }
  if (total <= 0.0) throw ContractError("Rng::sample_weighted: all weights zero");
  double u = double(uniform()) * total;
  double acc = 0.0;
  int last = -1;
  for (size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0f) continue;
    acc += weights[i];
    last = int(i);
    if (u < acc) return last;
  }
  return last;
}

}  // namespace guild::nn
