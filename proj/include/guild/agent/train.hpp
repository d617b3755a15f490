#pragma once

#include <cstdint>
#include <vector>

#include "guild/agent/expert.hpp"
#include "guild/agent/kg_index.hpp"
#include "guild/agent/tokenizer.hpp"
#include "guild/nn/optim.hpp"
#include "guild/nn/rng.hpp"
#include "guild/story/story.hpp"
#include "guild/tw/engine.hpp"

namespace guild::agent {

std::vector<uint8_t> to_mask(const std::vector<int>& indices, int n);

struct TrainConfig {
  float gamma = 0.9f;
  float value_coef = 0.5f;
  float entropy_coef = 0.01f;
  nn::AdamConfig adam;
};

struct EpisodeStats {
  float score = 0.0f;
  int steps = 0;
  bool reached_goal = false;
  float loss = 0.0f;
  float grad_norm = 0.0f;
};

// One step's contribution to the episode loss.
struct StepRefs {
  nn::ValueRef logp;     // log-probability of the chosen action
  nn::ValueRef entropy;  // template entropy + mean object entropy
  nn::ValueRef value;    // critic output
  float reward = 0.0f;
};

// Discounted-return actor-critic episode loss:
//   sum_t [ -advantage_t * logp_t ] + value_coef * sum_t (G_t - v_t)^2
//   - entropy_coef * sum_t H_t
// Advantages are treated as constants; when the episode was cut short the
// return bootstraps from the last step's critic value.
nn::ValueRef a2c_loss(nn::Tape& tape, const std::vector<StepRefs>& steps, float gamma,
                      float value_coef, float entropy_coef, bool truncated);

// Trains one expert on its role with multinomial exploration, one optimizer
// step per episode.
class ExpertTrainer {
 public:
  ExpertTrainer(Expert& expert, const tw::GameSpec& spec, const story::RoleSpec& role,
                const Tokenizer& tokenizer, const KgIndex& kg_index, TrainConfig cfg = {});

  // Runs a training episode, decrementing *budget per env step and stopping
  // early (with bootstrap) when it reaches zero. No-op at zero budget.
  EpisodeStats train_episode(nn::Rng episode_rng, int64_t& budget);

  int64_t episodes_run() const { return episodes_; }

 private:
  Expert* expert_;
  const tw::GameSpec* spec_;
  const story::RoleSpec* role_;
  const Tokenizer* tokenizer_;
  const KgIndex* kg_index_;
  TrainConfig cfg_;
  nn::Adam opt_;
  nn::Tape tape_;
  int64_t episodes_ = 0;
};

// Greedy episode on the gradient-free path; ties resolve to the lowest index.
EpisodeStats eval_expert_episode(const Expert& expert, const tw::GameSpec& spec,
                                 const story::RoleSpec& role, const Tokenizer& tokenizer,
                                 const KgIndex& kg_index, Expert::Raw& raw);

int argmax_tiebreak_low(const std::vector<float>& v);

}  // namespace guild::agent
