#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "guild/agent/train.hpp"
#include "guild/harness/config.hpp"
#include "guild/story/story.hpp"

namespace guild::harness {

struct CurvePoint {
  int64_t training_step = 0;
  float avg_score = 0.0f;
  float avg_steps = 0.0f;
  float std_score = 0.0f;
  bool operator==(const CurvePoint&) const = default;
};

/// One (experiment, seed) training run: its evaluation curve and where the
/// best-evaluating checkpoint ended up.
struct RunRecord {
  uint64_t config_hash = 0;
  uint64_t seed = 0;
  std::string experiment;
  std::vector<CurvePoint> curve;
  double wall_clock_sec = 0.0;
  std::string checkpoint_path;
};

/// Ranking used everywhere a single model is picked from a curve: higher
/// score first, then fewer steps per episode, then earlier training step.
bool point_better(const CurvePoint& a, const CurvePoint& b);
const CurvePoint& best_point(const RunRecord& rec);

std::string hash_hex(uint64_t h);
std::string runs_root(const ExperimentConfig& cfg);
std::string run_dir(const ExperimentConfig& cfg, const std::string& experiment, uint64_t seed);
bool run_exists(const ExperimentConfig& cfg, const std::string& experiment, uint64_t seed);

void write_curve(const std::string& path, const std::vector<CurvePoint>& curve);
std::vector<CurvePoint> read_curve(const std::string& path);

RunRecord load_run_record(const ExperimentConfig& cfg, const std::string& experiment,
                          uint64_t seed);
std::vector<RunRecord> load_all_records(const ExperimentConfig& cfg);

/// True when the two roles share at least one rewarded behavior.
bool role_relevant(const story::RoleSpec& expert_role, const story::RoleSpec& target);

/// Explicit checkpoints from the config when given, otherwise each expert
/// role's best completed run under this config (score, then steps, then
/// training step, then lowest seed). Throws ConfigError when a role has no
/// trained checkpoint yet.
std::vector<std::string> resolve_expert_checkpoints(const ExperimentConfig& cfg);

// Experiment runners. Each trains with per-seed determinism, evaluates
// greedily every eval_cadence env steps (plus step 0), writes
// curve.csv/checkpoint/log under the run directory and returns the record.
RunRecord train_expert(const ExperimentConfig& cfg, const std::string& role_name,
                       uint64_t seed);
RunRecord run_moe(const ExperimentConfig& cfg, const std::string& target_name, uint64_t seed);
RunRecord run_baseline_scratch(const ExperimentConfig& cfg, const std::string& target_name,
                               uint64_t seed);
RunRecord run_baseline_finetune(const ExperimentConfig& cfg,
                                const std::string& expert_checkpoint,
                                const std::string& target_name, uint64_t seed);
std::vector<RunRecord> run_finetune_all(const ExperimentConfig& cfg,
                                        const std::string& target_name, uint64_t seed);
RunRecord run_ablation(const ExperimentConfig& cfg, const std::string& target_name,
                       AblationKind kind, uint64_t seed);

/// Per-experiment CSVs, a best-model summary.csv and one SVG learning curve
/// per experiment (mean with a std band across seeds). Empty input is an
/// error.
void aggregate_and_emit(const std::vector<RunRecord>& records, const std::string& out_dir);

/// Reads rows written by aggregate_and_emit back into records (experiment,
/// seed and curve; hashes and wall clocks are not carried by the CSV).
std::vector<RunRecord> read_experiment_csv(const std::string& path);

struct EvalReport {
  std::vector<agent::EpisodeStats> games;
  float avg_score = 0.0f;
  float avg_steps = 0.0f;
};

/// Greedy evaluation of a saved expert on a role, `games` episodes.
EvalReport eval_expert_checkpoint(const std::string& checkpoint, const std::string& game_path,
                                  const std::string& role_path, int games, uint64_t seed);

/// Rebuilds the ensemble a run's manifest describes, restores the trainable
/// checkpoint and evaluates it greedily.
EvalReport eval_manifest(const std::string& manifest_path, const std::string& checkpoint,
                         int games, uint64_t seed);

}  // namespace guild::harness
