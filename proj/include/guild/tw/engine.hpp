#pragma once

#include <string>
#include <vector>

#include "guild/tw/game_spec.hpp"

namespace guild::tw {

struct Action {
  int tmpl = -1;
  std::vector<int> objects;  // vocabulary indices, one per template slot
};

struct Observation {
  std::string room;
  std::string inventory;
  std::string command;
  std::string feedback;
};

struct WorldState {
  int room = -1;
  std::vector<int> entity_loc;
  std::vector<uint8_t> alive;
  int step_count = 0;
  bool done = false;
  std::string last_command;
  std::string last_feedback;
};

struct ParseResult {
  bool ok = false;
  Action action;
  std::string feedback;  // set on failure
};

WorldState reset(const GameSpec& spec);

std::string describe_room(const WorldState& state, const GameSpec& spec);
std::string describe_inventory(const WorldState& state, const GameSpec& spec);
Observation observe(const WorldState& state, const GameSpec& spec);

// Applies one action. Inadmissible actions only advance the step counter and
// set failure feedback. Throws ContractError when called on a finished episode
// or with an action that violates the template arity.
Observation step(WorldState& state, const GameSpec& spec, const Action& action);

// Templates for which a complete admissible object binding exists right now.
std::vector<int> admissible_templates(const WorldState& state, const GameSpec& spec);

// Vocabulary indices accepted by one slot of a template, ascending.
std::vector<int> admissible_objects(const WorldState& state, const GameSpec& spec,
                                    int tmpl, int slot);

ParseResult parse_command(const std::string& text, const GameSpec& spec);
std::string command_text(const Action& action, const GameSpec& spec);
std::string render(const Observation& obs);

// Behaviors the engine implements; the loader rejects templates outside this set.
bool engine_supports(const std::string& template_id);

// Every fixed phrase the engine can emit (feedback lines, listing glue).
// Lets text consumers build a complete word list up front.
const std::vector<std::string>& fixed_phrases();

}  // namespace guild::tw
