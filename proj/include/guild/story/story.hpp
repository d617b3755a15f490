#pragma once

#include <compare>
#include <set>
#include <string>
#include <vector>

#include "guild/tw/engine.hpp"
#include "guild/tw/game_spec.hpp"

namespace guild::story {

struct Triple {
  std::string subject;
  std::string relation;
  std::string object;
  auto operator<=>(const Triple&) const = default;
};

std::string to_string(const Triple& t);

// Facts the agent can read off the current world: where it is, what lies in
// the room, what it carries, what it has slain.
std::vector<Triple> extract_triples(const tw::WorldState& state, const tw::GameSpec& spec);

// Episode-scoped fact accumulator. Monotone except the (you, in, _) fact,
// which moves with the agent.
class WorldKG {
 public:
  void clear();
  // Returns the triples that were not present before this update.
  std::vector<Triple> update(const std::vector<Triple>& fresh);
  bool contains(const Triple& t) const { return triples_.count(t) > 0; }
  const std::set<Triple>& all() const { return triples_; }

 private:
  std::set<Triple> triples_;
};

struct RoleSpec {
  std::string role;
  float triple_reward = 0.0f;
  float goal_bonus = 0.0f;
  std::vector<Triple> triples;
  float max_score() const { return triple_reward * float(triples.size()) + goal_bonus; }
  bool targets(const Triple& t) const;
};

// Target triples already paid out this episode.
class MatchLedger {
 public:
  void clear() { rewarded_.clear(); }
  bool rewarded(const Triple& t) const { return rewarded_.count(t) > 0; }
  void mark(const Triple& t) { rewarded_.insert(t); }
  size_t size() const { return rewarded_.size(); }

 private:
  std::set<Triple> rewarded_;
};

// Pays each matched target triple once per episode.
float intrinsic_reward(const std::vector<Triple>& delta, const RoleSpec& role,
                       MatchLedger& ledger);

// Intrinsic reward plus the goal bonus on the step that enters the goal room.
float total_step_reward(float intrinsic, const tw::WorldState& state, const tw::GameSpec& spec,
                        const RoleSpec& role);

RoleSpec load_role(const std::string& path, const tw::GameSpec& spec);
RoleSpec parse_role(const std::string& json_text, const std::string& origin,
                    const tw::GameSpec& spec);

// Builds a 7-behavior target role from picks out of existing roles plus novel
// behaviors. Picks must exist in their source; everything must be achievable.
RoleSpec compose_target_role(const std::string& name, const std::vector<RoleSpec>& sources,
                             const std::vector<std::vector<Triple>>& picks,
                             const std::vector<Triple>& novel, const tw::GameSpec& spec);

// Convenience wrapper the training loops use: feed it each post-step state and
// it returns that step's shaped reward while tracking episode score.
class RewardTracker {
 public:
  RewardTracker(const tw::GameSpec& spec, const RoleSpec& role) : spec_(&spec), role_(&role) {}
  void reset(const tw::WorldState& state);
  float on_step(const tw::WorldState& state);
  float score() const { return score_; }
  const WorldKG& kg() const { return kg_; }
  const MatchLedger& ledger() const { return ledger_; }
  size_t matched() const { return ledger_.size(); }

 private:
  const tw::GameSpec* spec_;
  const RoleSpec* role_;
  WorldKG kg_;
  MatchLedger ledger_;
  float score_ = 0.0f;
};

}  // namespace guild::story
