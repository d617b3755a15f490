#pragma once

#include <vector>

#include "guild/nn/rng.hpp"
#include "guild/nn/tensor.hpp"

namespace guild::nn {

/// Fills a weight tensor uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
void init_fan_in(ParamTensor& p, int fan_in, Rng& rng);

struct AdamConfig {
  float lr = 3e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float clip_norm = 40.0f;  // global norm across all trainable params
};

/// Adam over an explicit parameter list. Frozen parameters are never read
/// or written by step().
class Adam {
 public:
  Adam(std::vector<ParamTensor*> params, AdamConfig cfg = {});

  /// Clips the global gradient norm, applies one update, bumps the step
  /// counter. Returns the pre-clip global norm. Gradients are left in place;
  /// call zero_grad() afterwards.
  float step();

  void zero_grad();
  int64_t steps_taken() const { return t_; }

 private:
  std::vector<ParamTensor*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace guild::nn
