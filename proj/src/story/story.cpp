#include "guild/story/story.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <sstream>

#include <json.hpp>

#include "guild/errors.hpp"

namespace guild::story {

using nlohmann::json;
using tw::GameSpec;

std::string to_string(const Triple& t) {
  return "(" + t.subject + ", " + t.relation + ", " + t.object + ")";
}

std::vector<Triple> extract_triples(const tw::WorldState& state, const GameSpec& spec) {
  std::vector<Triple> out;
  const std::string& room = spec.rooms[size_t(state.room)].id;
  out.push_back({"you", "in", room});
  for (size_t ei = 0; ei < spec.entities.size(); ++ei) {
    const tw::Entity& e = spec.entities[ei];
    if (!e.creature && state.entity_loc[ei] == state.room)
      out.push_back({e.name, "in", room});
  }
  for (size_t ei = 0; ei < spec.entities.size(); ++ei) {
    if (state.entity_loc[ei] == tw::kInventory)
      out.push_back({"you", "have", spec.entities[ei].name});
  }
  for (size_t ei = 0; ei < spec.entities.size(); ++ei) {
    if (spec.entities[ei].creature && !state.alive[ei])
      out.push_back({"you", "hit", spec.entities[ei].name});
  }
  return out;
}

void WorldKG::clear() { triples_.clear(); }

std::vector<Triple> WorldKG::update(const std::vector<Triple>& fresh) {
  std::vector<Triple> delta;
  for (const Triple& t : fresh) {
    if (t.subject == "you" && t.relation == "in") {
      for (auto it = triples_.begin(); it != triples_.end();) {
        if (it->subject == "you" && it->relation == "in" && it->object != t.object)
          it = triples_.erase(it);
        else
          ++it;
      }
    }
    if (triples_.insert(t).second) delta.push_back(t);
  }
  return delta;
}

bool RoleSpec::targets(const Triple& t) const {
  return std::find(triples.begin(), triples.end(), t) != triples.end();
}

float intrinsic_reward(const std::vector<Triple>& delta, const RoleSpec& role,
                       MatchLedger& ledger) {
  float reward = 0.0f;
  for (const Triple& t : delta) {
    if (!role.targets(t) || ledger.rewarded(t)) continue;
    ledger.mark(t);
    reward += role.triple_reward;
  }
  return reward;
}

float total_step_reward(float intrinsic, const tw::WorldState& state, const GameSpec& spec,
                        const RoleSpec& role) {
  float total = intrinsic;
  if (state.done && state.room == spec.goal_room) total += role.goal_bonus;
  return total;
}

namespace {

std::vector<uint8_t> reachable_rooms(const GameSpec& spec) {
  std::vector<uint8_t> seen(spec.rooms.size(), 0);
  std::queue<int> q;
  q.push(spec.start_room);
  seen[size_t(spec.start_room)] = 1;
  while (!q.empty()) {
    int r = q.front();
    q.pop();
    for (const auto& [dir, to] : spec.rooms[size_t(r)].exits) {
      (void)dir;
      if (!seen[size_t(to)]) {
        seen[size_t(to)] = 1;
        q.push(to);
      }
    }
  }
  return seen;
}

void validate_role(const RoleSpec& role, const GameSpec& spec, const std::string& origin) {
  std::vector<std::string> errs;
  if (role.role.empty()) errs.push_back("role name must be non-empty");
  if (role.triple_reward <= 0.0f) errs.push_back("triple_reward must be positive");
  if (role.goal_bonus <= 0.0f) errs.push_back("goal_bonus must be positive");
  if (role.triples.empty()) errs.push_back("triples must be non-empty");

  auto reachable = reachable_rooms(spec);
  std::set<Triple> seen;
  for (const Triple& t : role.triples) {
    std::string label = to_string(t);
    if (!seen.insert(t).second) errs.push_back(label + ": duplicate behavior");
    if (t.subject != "you") {
      errs.push_back(label + ": behaviors must start with 'you'");
      continue;
    }
    if (t.relation != "have" && t.relation != "hit") {
      errs.push_back(label + ": relation must be 'have' or 'hit'");
      continue;
    }
    int ei = spec.entity_index(t.object);
    if (ei < 0) {
      errs.push_back(label + ": no entity named '" + t.object + "'");
      continue;
    }
    const tw::Entity& e = spec.entities[size_t(ei)];
    if (t.relation == "have" && (e.creature || !e.portable))
      errs.push_back(label + ": '" + t.object + "' cannot be carried");
    if (t.relation == "hit" && !e.creature)
      errs.push_back(label + ": '" + t.object + "' is not a creature");
    if (e.start_location < 0 || !reachable[size_t(e.start_location)])
      errs.push_back(label + ": '" + t.object + "' is out of reach");
  }
  if (!errs.empty()) {
    std::ostringstream msg;
    msg << origin << ": invalid role:";
    for (const auto& e : errs) msg << "\n  - " << e;
    throw ConfigError(msg.str());
  }
}

}  // namespace

RoleSpec parse_role(const std::string& json_text, const std::string& origin,
                    const GameSpec& spec) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": parse error: " + e.what());
  }
  if (!j.is_object() || !j.contains("role") || !j.contains("triple_reward") ||
      !j.contains("goal_bonus") || !j.contains("triples"))
    throw ConfigError(origin + ": role file needs role, triple_reward, goal_bonus, triples");
  for (auto it = j.begin(); it != j.end(); ++it) {
    std::string k = it.key();
    if (k != "role" && k != "triple_reward" && k != "goal_bonus" && k != "triples")
      throw ConfigError(origin + ": unknown key '" + k + "'");
  }

  RoleSpec role;
  if (j["role"].is_string()) role.role = j["role"].get<std::string>();
  if (j["triple_reward"].is_number()) role.triple_reward = j["triple_reward"].get<float>();
  if (j["goal_bonus"].is_number()) role.goal_bonus = j["goal_bonus"].get<float>();
  if (j["triples"].is_array()) {
    for (const auto& tj : j["triples"]) {
      if (!tj.is_object() || !tj.contains("subject") || !tj.contains("relation") ||
          !tj.contains("object"))
        throw ConfigError(origin + ": each triple needs subject, relation, object");
      role.triples.push_back({tj["subject"].get<std::string>(),
                              tj["relation"].get<std::string>(),
                              tj["object"].get<std::string>()});
    }
  }
  validate_role(role, spec, origin);
  return role;
}

RoleSpec load_role(const std::string& path, const GameSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open role file");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_role(text, path, spec);
}

RoleSpec compose_target_role(const std::string& name, const std::vector<RoleSpec>& sources,
                             const std::vector<std::vector<Triple>>& picks,
                             const std::vector<Triple>& novel, const GameSpec& spec) {
  if (picks.size() != sources.size())
    throw ConfigError("compose_target_role: one pick list per source role");
  if (sources.empty())
    throw ConfigError("compose_target_role: need at least one source role");

  RoleSpec target;
  target.role = name;
  target.triple_reward = sources.front().triple_reward;
  target.goal_bonus = sources.front().goal_bonus;
  for (size_t si = 0; si < sources.size(); ++si) {
    for (const Triple& t : picks[si]) {
      if (!sources[si].targets(t))
        throw ConfigError("compose_target_role: " + to_string(t) + " is not a behavior of '" +
                          sources[si].role + "'");
      target.triples.push_back(t);
    }
  }
  for (const Triple& t : novel) target.triples.push_back(t);
  if (target.triples.size() != 7)
    throw ConfigError("compose_target_role: target roles take exactly 7 behaviors, got " +
                      std::to_string(target.triples.size()));
  validate_role(target, spec, "compose_target_role(" + name + ")");
  return target;
}

void RewardTracker::reset(const tw::WorldState& state) {
  kg_.clear();
  ledger_.clear();
  score_ = 0.0f;
  kg_.update(extract_triples(state, *spec_));
}

float RewardTracker::on_step(const tw::WorldState& state) {
  std::vector<Triple> delta = kg_.update(extract_triples(state, *spec_));
  float reward = intrinsic_reward(delta, *role_, ledger_);
  reward = total_step_reward(reward, state, *spec_, *role_);
  score_ += reward;
  return reward;
}

}  // namespace guild::story
