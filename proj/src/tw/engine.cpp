#include "guild/tw/engine.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "guild/errors.hpp"

namespace guild::tw {

namespace {

constexpr const char* kCantGo = "You can't go that way.";
constexpr const char* kNotHere = "You don't see that here.";
constexpr const char* kCantTake = "You can't take that.";
constexpr const char* kAlreadyHave = "You already have that.";
constexpr const char* kNotCarrying = "You aren't carrying that.";
constexpr const char* kNoViolence = "Violence won't help here.";
constexpr const char* kBadVerb = "I don't understand.";
constexpr const char* kBadObject = "I don't see that here.";

int entity_at(const GameSpec& spec, int vocab_id) {
  if (vocab_id < 0 || vocab_id >= spec.n_vocab()) return -1;
  return spec.vocab_entity[size_t(vocab_id)];
}

std::string join_names(const std::vector<std::string>& names) {
  std::string out;
  for (size_t i = 0; i < names.size(); ++i) {
    if (i) out += ", ";
    out += names[i];
  }
  return out;
}

std::string apply_action(WorldState& state, const GameSpec& spec, const Action& action) {
  const ActionTemplate& t = spec.templates[size_t(action.tmpl)];
  const std::string& behavior = t.id;

  if (behavior == "look") return describe_room(state, spec);
  if (behavior == "inventory") return describe_inventory(state, spec);

  if (behavior == "go") {
    const std::string& word = spec.vocab[size_t(action.objects[0])];
    for (const auto& [dir, to] : spec.rooms[size_t(state.room)].exits) {
      if (dir == word) {
        state.room = to;
        return describe_room(state, spec);
      }
    }
    return kCantGo;
  }

  if (behavior == "take") {
    int ei = entity_at(spec, action.objects[0]);
    if (ei < 0) return kNotHere;
    const Entity& e = spec.entities[size_t(ei)];
    int loc = state.entity_loc[size_t(ei)];
    if (loc == kInventory) return kAlreadyHave;
    if (loc != state.room) return kNotHere;
    if (e.creature || !e.portable) return kCantTake;
    state.entity_loc[size_t(ei)] = kInventory;
    return "You take the " + e.name + ".";
  }

  if (behavior == "drop") {
    int ei = entity_at(spec, action.objects[0]);
    if (ei < 0 || state.entity_loc[size_t(ei)] != kInventory) return kNotCarrying;
    state.entity_loc[size_t(ei)] = state.room;
    return "You drop the " + spec.entities[size_t(ei)].name + ".";
  }

  if (behavior == "hit") {
    int ei = entity_at(spec, action.objects[0]);
    if (ei < 0) return kNotHere;
    const Entity& e = spec.entities[size_t(ei)];
    if (state.entity_loc[size_t(ei)] != state.room) return kNotHere;
    if (!e.creature) return kNoViolence;
    state.alive[size_t(ei)] = 0;
    state.entity_loc[size_t(ei)] = kGone;
    return "You slay the " + e.name + ".";
  }

  if (behavior == "put") {
    int item = entity_at(spec, action.objects[0]);
    if (item < 0 || state.entity_loc[size_t(item)] != kInventory) return kNotCarrying;
    int anchor = entity_at(spec, action.objects[1]);
    if (anchor < 0 || state.entity_loc[size_t(anchor)] != state.room) return kNotHere;
    state.entity_loc[size_t(item)] = state.room;
    return "You put the " + spec.entities[size_t(item)].name + " by the " +
           spec.entities[size_t(anchor)].name + ".";
  }

  throw ContractError("apply_action: no behavior named '" + behavior + "'");
}

}  // namespace

bool engine_supports(const std::string& template_id) {
  static const char* known[] = {"go", "take", "drop", "hit", "look", "inventory", "put"};
  for (const char* k : known)
    if (template_id == k) return true;
  return false;
}

const std::vector<std::string>& fixed_phrases() {
  static const std::vector<std::string> phrases = {
      kCantGo, kNotHere, kCantTake, kAlreadyHave, kNotCarrying, kNoViolence,
      kBadVerb, kBadObject,
      "You take the", "You drop the", "You slay the", "You put the", "by the",
      "You see:", "Exits:", "You carry:", "You carry nothing.",
  };
  return phrases;
}

WorldState reset(const GameSpec& spec) {
  WorldState s;
  s.room = spec.start_room;
  s.entity_loc.reserve(spec.entities.size());
  s.alive.reserve(spec.entities.size());
  for (const Entity& e : spec.entities) {
    s.entity_loc.push_back(e.start_location);
    s.alive.push_back(e.creature ? 1 : 0);
  }
  return s;
}

std::string describe_room(const WorldState& state, const GameSpec& spec) {
  const Room& room = spec.rooms[size_t(state.room)];
  std::string out = room.description;
  std::vector<std::string> here;
  for (size_t ei = 0; ei < spec.entities.size(); ++ei)
    if (state.entity_loc[ei] == state.room) here.push_back(spec.entities[ei].name);
  if (!here.empty()) out += " You see: " + join_names(here) + ".";
  if (!room.exits.empty()) {
    std::vector<std::string> dirs;
    for (const auto& [dir, to] : room.exits) {
      (void)to;
      dirs.push_back(dir);
    }
    out += " Exits: " + join_names(dirs) + ".";
  }
  return out;
}

std::string describe_inventory(const WorldState& state, const GameSpec& spec) {
  std::vector<std::string> carried;
  for (size_t ei = 0; ei < spec.entities.size(); ++ei)
    if (state.entity_loc[ei] == kInventory) carried.push_back(spec.entities[ei].name);
  if (carried.empty()) return "You carry nothing.";
  return "You carry: " + join_names(carried) + ".";
}

Observation observe(const WorldState& state, const GameSpec& spec) {
  Observation obs;
  obs.room = describe_room(state, spec);
  obs.inventory = describe_inventory(state, spec);
  obs.command = state.last_command;
  obs.feedback = state.last_feedback;
  return obs;
}

Observation step(WorldState& state, const GameSpec& spec, const Action& action) {
  if (state.done) throw ContractError("step: episode already finished");
  if (action.tmpl < 0 || action.tmpl >= spec.n_templates())
    throw ContractError("step: template out of range");
  const ActionTemplate& t = spec.templates[size_t(action.tmpl)];
  if (int(action.objects.size()) != t.slots)
    throw ContractError("step: action arity does not match template '" + t.id + "'");
  for (int obj : action.objects)
    if (obj < 0 || obj >= spec.n_vocab())
      throw ContractError("step: object out of vocabulary range");

  std::string feedback = apply_action(state, spec, action);
  state.step_count += 1;
  state.last_command = command_text(action, spec);
  state.last_feedback = std::move(feedback);
  if (state.room == spec.goal_room || state.step_count >= spec.episode_cap) state.done = true;
  return observe(state, spec);
}

std::vector<int> admissible_objects(const WorldState& state, const GameSpec& spec,
                                    int tmpl, int slot) {
  if (tmpl < 0 || tmpl >= spec.n_templates())
    throw ContractError("admissible_objects: template out of range");
  const ActionTemplate& t = spec.templates[size_t(tmpl)];
  if (slot < 0 || slot >= t.slots)
    throw ContractError("admissible_objects: slot out of range for '" + t.id + "'");

  std::vector<int> out;
  const std::string& behavior = t.id;
  if (behavior == "go") {
    for (const auto& [dir, to] : spec.rooms[size_t(state.room)].exits) {
      (void)to;
      out.push_back(spec.vocab_index.at(dir));
    }
  } else if (behavior == "take") {
    for (size_t ei = 0; ei < spec.entities.size(); ++ei) {
      const Entity& e = spec.entities[ei];
      if (!e.creature && e.portable && state.entity_loc[ei] == state.room)
        out.push_back(spec.entity_vocab[ei]);
    }
  } else if (behavior == "drop" || (behavior == "put" && slot == 0)) {
    for (size_t ei = 0; ei < spec.entities.size(); ++ei)
      if (state.entity_loc[ei] == kInventory) out.push_back(spec.entity_vocab[ei]);
  } else if (behavior == "hit") {
    for (size_t ei = 0; ei < spec.entities.size(); ++ei)
      if (spec.entities[ei].creature && state.entity_loc[ei] == state.room && state.alive[ei])
        out.push_back(spec.entity_vocab[ei]);
  } else if (behavior == "put") {  // slot 1: anything to put the item next to
    for (size_t ei = 0; ei < spec.entities.size(); ++ei)
      if (state.entity_loc[ei] == state.room) out.push_back(spec.entity_vocab[ei]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> admissible_templates(const WorldState& state, const GameSpec& spec) {
  std::vector<int> out;
  if (state.done) return out;
  for (int ti = 0; ti < spec.n_templates(); ++ti) {
    bool ok = true;
    for (int slot = 0; slot < spec.templates[size_t(ti)].slots; ++slot) {
      if (admissible_objects(state, spec, ti, slot).empty()) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(ti);
  }
  return out;
}

std::string command_text(const Action& action, const GameSpec& spec) {
  const ActionTemplate& t = spec.templates[size_t(action.tmpl)];
  std::string out = t.id;
  if (t.slots >= 1) out += " " + spec.vocab[size_t(action.objects[0])];
  if (t.slots == 2) out += " " + t.prepositions[0] + " " + spec.vocab[size_t(action.objects[1])];
  return out;
}

ParseResult parse_command(const std::string& text, const GameSpec& spec) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) tokens.push_back(cur);
      cur.clear();
    } else if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '\'') {
      cur.push_back(char(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  std::erase_if(tokens, [](const std::string& w) { return w == "the" || w == "a" || w == "an"; });

  ParseResult res;
  if (tokens.empty()) {
    res.feedback = kBadVerb;
    return res;
  }
  auto verb = spec.verb_to_template.find(tokens.front());
  if (verb == spec.verb_to_template.end()) {
    res.feedback = kBadVerb;
    return res;
  }
  const ActionTemplate& t = spec.templates[size_t(verb->second)];
  res.action.tmpl = verb->second;

  std::vector<std::string> rest(tokens.begin() + 1, tokens.end());
  auto resolve = [&](std::vector<std::string>::iterator first,
                     std::vector<std::string>::iterator last) -> int {
    std::string phrase;
    for (auto it = first; it != last; ++it) {
      if (!phrase.empty()) phrase += ' ';
      phrase += *it;
    }
    auto found = spec.alias_to_vocab.find(phrase);
    return found == spec.alias_to_vocab.end() ? -1 : found->second;
  };

  if (t.slots == 0) {
    if (!rest.empty()) {
      res.feedback = kBadVerb;
      return res;
    }
  } else if (t.slots == 1) {
    if (rest.empty()) {
      res.feedback = kBadVerb;
      return res;
    }
    int obj = resolve(rest.begin(), rest.end());
    if (obj < 0) {
      res.feedback = kBadObject;
      return res;
    }
    res.action.objects.push_back(obj);
  } else {
    auto prep = rest.end();
    for (auto it = rest.begin(); it != rest.end(); ++it) {
      if (std::find(t.prepositions.begin(), t.prepositions.end(), *it) != t.prepositions.end()) {
        prep = it;
        break;
      }
    }
    if (prep == rest.end() || prep == rest.begin() || prep + 1 == rest.end()) {
      res.feedback = kBadVerb;
      return res;
    }
    int obj0 = resolve(rest.begin(), prep);
    int obj1 = resolve(prep + 1, rest.end());
    if (obj0 < 0 || obj1 < 0) {
      res.feedback = kBadObject;
      return res;
    }
    res.action.objects = {obj0, obj1};
  }
  res.ok = true;
  return res;
}

std::string render(const Observation& obs) {
  std::ostringstream out;
  out << "[room] " << obs.room << "\n[inv] " << obs.inventory << "\n[cmd] " << obs.command
      << "\n[fb] " << obs.feedback << "\n";
  return out.str();
}

}  // namespace guild::tw
