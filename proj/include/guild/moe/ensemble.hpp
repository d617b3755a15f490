#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "guild/agent/expert.hpp"
#include "guild/agent/kg_index.hpp"
#include "guild/agent/tokenizer.hpp"
#include "guild/agent/train.hpp"
#include "guild/moe/attention.hpp"
#include "guild/nn/optim.hpp"
#include "guild/nn/rng.hpp"
#include "guild/nn/tape.hpp"
#include "guild/story/story.hpp"
#include "guild/tw/engine.hpp"

namespace guild::moe {

struct MoeConfig {
  float gamma = 0.9f;
  float value_coef = 0.5f;
  float entropy_coef = 0.01f;
  float flatten_coef = 0.1f;
  float v_floor = 0.05f;
  // When set, attention weights span only the frozen experts; the trainable
  // expert's proposal then enters solely through the averaging step.
  bool attend_frozen_only = false;
  int state_bottleneck = 32;
  int dist_bottleneck = 32;
  EpsilonSchedule epsilon;
  nn::AdamConfig adam;
};

// One expert's proposal for the current step: its masked distribution scaled
// by its clamped critic value.
struct SeededDistribution {
  int expert = -1;
  std::vector<float> probs;
  float value = 0.0f;
  std::vector<float> seeded;
};

SeededDistribution make_seeded(int expert, std::vector<float> probs, float value,
                               float v_floor);

// Attention weights plus the blended vector they produce.
struct MixResult {
  nn::ValueRef alpha;
  nn::ValueRef logits;
};

MixResult attend_and_mix(nn::Tape& tape, AttentionModule& module, nn::ValueRef state,
                         std::span<const nn::ValueRef> seeded, nn::ValueRef hot);

// Per-step record of who proposed what; kept for the last episode run.
struct StepTrace {
  std::vector<int> expert_top;  // each expert's top template, trainable expert last
  std::vector<float> act_alpha;
  std::vector<std::vector<float>> obj_alpha;  // one entry per decoded slot
  int chosen_tmpl = -1;
  float epsilon = 0.0f;
  bool explored = false;
};

// Frozen role experts blended with one trainable expert. The trainable
// expert's encoding queries two attention modules (templates and objects)
// whose weights combine every expert's value-seeded proposal; actions are
// epsilon-greedy over the blended distribution, and updates touch only the
// trainable expert and the attention parameters.
class Ensemble {
 public:
  Ensemble(std::vector<agent::Expert> frozen, agent::Expert hot, const tw::GameSpec& spec,
           const story::RoleSpec& role, const agent::Tokenizer& tokenizer,
           const agent::KgIndex& kg_index, MoeConfig cfg, nn::Rng init_rng);

  Ensemble(const Ensemble&) = delete;
  Ensemble& operator=(const Ensemble&) = delete;

  // Epsilon-greedy episode with one optimizer step at the end. Decrements
  // *budget per env step and cuts the episode short (with bootstrap) when it
  // reaches zero. No-op at zero budget.
  agent::EpisodeStats train_episode(nn::Rng episode_rng, int64_t& budget);

  // Greedy episode: no exploration coin, no update, step counters untouched.
  // Frozen experts still draw their own template votes from the stream, so a
  // fixed seed fixes the trajectory bit-for-bit.
  agent::EpisodeStats eval_episode(nn::Rng episode_rng);

  int n_experts() const { return int(frozen_.size()) + 1; }
  int64_t env_steps() const { return env_steps_; }
  int64_t updates_run() const { return updates_; }
  float current_epsilon() const { return cfg_.epsilon.at(env_steps_); }

  const agent::Expert& frozen(int j) const { return frozen_[size_t(j)]; }
  const agent::Expert& hot() const { return hot_; }
  const MoeConfig& config() const { return cfg_; }
  const std::vector<StepTrace>& last_trace() const { return trace_; }

  uint64_t frozen_hash() const;
  uint64_t trainable_hash() const;

  // Checkpoints cover the trainable expert and both attention modules; the
  // frozen experts keep their own files.
  void save_trainable(const std::string& path, uint64_t config_hash) const;
  void restore_trainable(const std::string& path);

 private:
  agent::EpisodeStats run_episode(nn::Rng& rng, int64_t* budget);
  std::vector<nn::ParamTensor*> trainable_params();

  std::vector<agent::Expert> frozen_;
  agent::Expert hot_;
  const tw::GameSpec* spec_;
  const story::RoleSpec* role_;
  const agent::Tokenizer* tokenizer_;
  const agent::KgIndex* kg_index_;
  MoeConfig cfg_;
  AttentionModule act_attn_;
  AttentionModule obj_attn_;
  nn::Adam opt_;
  nn::Tape tape_;
  std::vector<agent::Expert::Raw> raws_;
  std::vector<StepTrace> trace_;
  int64_t env_steps_ = 0;
  int64_t updates_ = 0;
};

}  // namespace guild::moe
