#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "guild/agent/expert.hpp"
#include "guild/moe/ensemble.hpp"

namespace guild::harness {

enum class AblationKind { none, distractor4, irrelevant_only };

AblationKind parse_ablation(const std::string& name);
std::string to_string(AblationKind kind);

/// Everything an experiment run depends on. Role entries are file paths; the
/// experts list holds the pre-training roles, the targets list the transfer
/// roles. `expert_checkpoints`, when non-empty, pins the frozen ensemble
/// members to explicit files (one per expert role, same order); when empty
/// the runner picks each role's best checkpoint from this config's own
/// expert runs.
struct ExperimentConfig {
  std::string game = "data/world.json";
  std::vector<std::string> experts;
  std::vector<std::string> targets;
  std::vector<std::string> expert_checkpoints;
  int64_t expert_budget = 50000;
  int64_t moe_budget = 15000;
  int64_t eval_cadence = 500;
  int eval_games = 10;
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<std::string> baselines = {"scratch", "finetune"};
  AblationKind ablation = AblationKind::none;
  std::string out_root = "runs";
  agent::ExpertArch arch;
  moe::MoeConfig moe;

  // Content hash over the fields that shape results. Where outputs land
  // (out_root) and which experiment families a command launches (baselines,
  // ablation) are deliberately excluded: the same hash names the same runs
  // directory across invocations that merely select different subsets.
  uint64_t hash() const;

  // Expert pre-training, the scratch baseline and fine-tuning share the
  // actor-critic coefficients configured for the ensemble.
  agent::TrainConfig train_config() const;
};

/// Serializes the full config (including selection fields) in the same
/// schema parse_config reads, so a dump can be fed back in unchanged.
std::string dump_config(const ExperimentConfig& cfg);

ExperimentConfig parse_config(const std::string& json_text, const std::string& origin);
ExperimentConfig load_config(const std::string& path);

/// Structural checks: budgets positive, seeds distinct, referenced files
/// exist, roles parse and their names are unique. Throws ConfigError.
void validate(const ExperimentConfig& cfg);

}  // namespace guild::harness
