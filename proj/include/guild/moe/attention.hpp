#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "guild/nn/rng.hpp"
#include "guild/nn/tape.hpp"
#include "guild/nn/tensor.hpp"

namespace guild::moe {

// Linearly decaying exploration rate, zero from `horizon` steps onward.
struct EpsilonSchedule {
  float initial = 1.0f;
  int64_t horizon = 10000;
  float at(int64_t step) const;
};

// Scales a masked probability vector by the critic's outlook, clamped below
// at v_floor so the result stays nonnegative and keeps the argmax.
nn::ValueRef value_seed(nn::Tape& tape, nn::ValueRef probs, nn::ValueRef v, float v_floor);
std::vector<float> value_seed(std::vector<float> probs, float v, float v_floor);

// Two-tower relevance scorer. The current state and every expert's seeded
// proposal are each bottlenecked, re-projected into the state width and
// layer-normalized; the softmaxed dot products become the expert weights.
class AttentionModule {
 public:
  AttentionModule(const std::string& name, int state_dim, int dist_dim,
                  int state_bottleneck, int dist_bottleneck, nn::Rng rng);

  // One weight per seeded vector; weights are nonnegative and sum to 1.
  nn::ValueRef attend(nn::Tape& tape, nn::ValueRef state,
                      std::span<const nn::ValueRef> seeded);

  std::vector<nn::ParamTensor*> params();
  std::vector<const nn::ParamTensor*> params() const;

  int state_dim() const { return state_dim_; }
  int dist_dim() const { return dist_dim_; }

 private:
  int state_dim_ = 0, dist_dim_ = 0, state_bneck_ = 0, dist_bneck_ = 0;
  nn::ParamTensor obs_down_, obs_up_, obs_gain_, obs_bias_;
  nn::ParamTensor dist_down_, dist_up_, dist_gain_, dist_bias_;
};

// Averages the hot expert's seeded vector with the attention-weighted sum of
// the attended list: (hot + sum_j alpha_j * seeded_j) / 2.
nn::ValueRef mix(nn::Tape& tape, nn::ValueRef alpha, std::span<const nn::ValueRef> seeded,
                 nn::ValueRef hot);

// Per-step spread regularizer: one minus the mean valid-template log
// probability, plus the slot-averaged equivalent for objects. Minimized by
// the uniform distribution over each valid set.
nn::ValueRef flatten_step(nn::Tape& tape, nn::ValueRef tmpl_logp,
                          const std::vector<uint8_t>& tmpl_mask,
                          std::span<const nn::ValueRef> obj_logps,
                          std::span<const std::vector<uint8_t>> obj_masks);

}  // namespace guild::moe
