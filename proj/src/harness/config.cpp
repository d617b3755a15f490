#include "guild/harness/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "guild/errors.hpp"
#include "guild/nn/rng.hpp"
#include "guild/story/story.hpp"
#include "guild/tw/game_spec.hpp"

namespace guild::harness {

using nlohmann::json;

AblationKind parse_ablation(const std::string& name) {
  if (name == "none") return AblationKind::none;
  if (name == "distractor4") return AblationKind::distractor4;
  if (name == "irrelevant_only") return AblationKind::irrelevant_only;
  throw ConfigError("unknown ablation kind '" + name +
                    "' (expected none, distractor4 or irrelevant_only)");
}

std::string to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::none: return "none";
    case AblationKind::distractor4: return "distractor4";
    case AblationKind::irrelevant_only: return "irrelevant_only";
  }
  return "none";
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& origin, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (!known.count(k))
      throw ConfigError(origin + ": unknown key '" + where + k + "'");
  }
}

json arch_json(const agent::ExpertArch& a) {
  return json{{"token_embed", a.token_embed}, {"gru_hidden", a.gru_hidden},
              {"state_dim", a.state_dim},     {"tmpl_embed", a.tmpl_embed},
              {"obj_embed", a.obj_embed},     {"kg_proj", a.kg_proj},
              {"critic_hidden", a.critic_hidden}};
}

json training_json(const moe::MoeConfig& m) {
  return json{{"gamma", m.gamma},
              {"value_coef", m.value_coef},
              {"entropy_coef", m.entropy_coef},
              {"lr", m.adam.lr},
              {"grad_clip", m.adam.clip_norm}};
}

json moe_json(const moe::MoeConfig& m) {
  return json{{"flatten_coef", m.flatten_coef},
              {"v_floor", m.v_floor},
              {"attend_frozen_only", m.attend_frozen_only},
              {"state_bottleneck", m.state_bottleneck},
              {"dist_bottleneck", m.dist_bottleneck},
              {"epsilon_initial", m.epsilon.initial},
              {"epsilon_horizon", m.epsilon.horizon}};
}

// The fields that determine run content. Selection fields (baselines,
// ablation) and the output location stay out so they can vary without
// renaming the runs directory.
json hashed_json(const ExperimentConfig& c) {
  return json{{"game", c.game},
              {"experts", c.experts},
              {"targets", c.targets},
              {"expert_checkpoints", c.expert_checkpoints},
              {"expert_budget", c.expert_budget},
              {"moe_budget", c.moe_budget},
              {"eval_cadence", c.eval_cadence},
              {"eval_games", c.eval_games},
              {"seeds", c.seeds},
              {"arch", arch_json(c.arch)},
              {"training", training_json(c.moe)},
              {"moe", moe_json(c.moe)}};
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

uint64_t ExperimentConfig::hash() const { return nn::fnv1a(hashed_json(*this).dump()); }

agent::TrainConfig ExperimentConfig::train_config() const {
  agent::TrainConfig t;
  t.gamma = moe.gamma;
  t.value_coef = moe.value_coef;
  t.entropy_coef = moe.entropy_coef;
  t.adam = moe.adam;
  return t;
}

std::string dump_config(const ExperimentConfig& cfg) {
  json j = hashed_json(cfg);
  j["baselines"] = cfg.baselines;
  j["ablation"] = to_string(cfg.ablation);
  j["out_root"] = cfg.out_root;
  return j.dump(2) + "\n";
}

ExperimentConfig parse_config(const std::string& json_text, const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": parse error: " + e.what());
  }
  if (!j.is_object()) throw ConfigError(origin + ": config must be a JSON object");
  reject_unknown(j,
                 {"game", "experts", "targets", "expert_checkpoints", "expert_budget",
                  "moe_budget", "eval_cadence", "eval_games", "seeds", "baselines",
                  "ablation", "out_root", "arch", "training", "moe"},
                 origin, "");

  ExperimentConfig c;
  try {
    read_field(j, "game", c.game);
    read_field(j, "experts", c.experts);
    read_field(j, "targets", c.targets);
    read_field(j, "expert_checkpoints", c.expert_checkpoints);
    read_field(j, "expert_budget", c.expert_budget);
    read_field(j, "moe_budget", c.moe_budget);
    read_field(j, "eval_cadence", c.eval_cadence);
    read_field(j, "eval_games", c.eval_games);
    read_field(j, "seeds", c.seeds);
    read_field(j, "baselines", c.baselines);
    if (j.contains("ablation")) c.ablation = parse_ablation(j.at("ablation").get<std::string>());
    read_field(j, "out_root", c.out_root);

    if (j.contains("arch")) {
      const json& a = j.at("arch");
      reject_unknown(a,
                     {"token_embed", "gru_hidden", "state_dim", "tmpl_embed", "obj_embed",
                      "kg_proj", "critic_hidden"},
                     origin, "arch.");
      read_field(a, "token_embed", c.arch.token_embed);
      read_field(a, "gru_hidden", c.arch.gru_hidden);
      read_field(a, "state_dim", c.arch.state_dim);
      read_field(a, "tmpl_embed", c.arch.tmpl_embed);
      read_field(a, "obj_embed", c.arch.obj_embed);
      read_field(a, "kg_proj", c.arch.kg_proj);
      read_field(a, "critic_hidden", c.arch.critic_hidden);
    }
    if (j.contains("training")) {
      const json& t = j.at("training");
      reject_unknown(t, {"gamma", "value_coef", "entropy_coef", "lr", "grad_clip"}, origin,
                     "training.");
      read_field(t, "gamma", c.moe.gamma);
      read_field(t, "value_coef", c.moe.value_coef);
      read_field(t, "entropy_coef", c.moe.entropy_coef);
      read_field(t, "lr", c.moe.adam.lr);
      read_field(t, "grad_clip", c.moe.adam.clip_norm);
    }
    if (j.contains("moe")) {
      const json& m = j.at("moe");
      reject_unknown(m,
                     {"flatten_coef", "v_floor", "attend_frozen_only", "state_bottleneck",
                      "dist_bottleneck", "epsilon_initial", "epsilon_horizon"},
                     origin, "moe.");
      read_field(m, "flatten_coef", c.moe.flatten_coef);
      read_field(m, "v_floor", c.moe.v_floor);
      read_field(m, "attend_frozen_only", c.moe.attend_frozen_only);
      read_field(m, "state_bottleneck", c.moe.state_bottleneck);
      read_field(m, "dist_bottleneck", c.moe.dist_bottleneck);
      read_field(m, "epsilon_initial", c.moe.epsilon.initial);
      read_field(m, "epsilon_horizon", c.moe.epsilon.horizon);
    }
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }

  if (const char* env = std::getenv("GUILD_OUT_ROOT"); env && *env) c.out_root = env;
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

void validate(const ExperimentConfig& cfg) {
  std::vector<std::string> errs;
  if (cfg.expert_budget <= 0) errs.push_back("expert_budget must be positive");
  if (cfg.moe_budget <= 0) errs.push_back("moe_budget must be positive");
  if (cfg.eval_cadence <= 0) errs.push_back("eval_cadence must be positive");
  if (cfg.eval_games <= 0) errs.push_back("eval_games must be positive");
  if (cfg.seeds.empty()) errs.push_back("seeds must be non-empty");
  std::set<uint64_t> seen_seeds(cfg.seeds.begin(), cfg.seeds.end());
  if (seen_seeds.size() != cfg.seeds.size()) errs.push_back("seeds must be distinct");
  if (cfg.experts.empty()) errs.push_back("experts must list at least one role file");
  if (!cfg.expert_checkpoints.empty() && cfg.expert_checkpoints.size() != cfg.experts.size())
    errs.push_back("expert_checkpoints must give one file per expert role");
  for (const std::string& b : cfg.baselines)
    if (b != "scratch" && b != "finetune")
      errs.push_back("unknown baseline '" + b + "' (expected scratch or finetune)");
  for (const std::string& p : cfg.expert_checkpoints)
    if (!std::filesystem::exists(p)) errs.push_back(p + ": checkpoint file does not exist");

  if (!errs.empty()) {
    std::ostringstream msg;
    msg << "invalid experiment config:";
    for (const auto& e : errs) msg << "\n  - " << e;
    throw ConfigError(msg.str());
  }

  // Loading the game and every role runs their own validators, which covers
  // existence, parseability and role achievability in one pass.
  tw::GameSpec spec = tw::load_spec(cfg.game);
  std::set<std::string> names;
  for (const std::string& path : cfg.experts) {
    story::RoleSpec r = story::load_role(path, spec);
    if (!names.insert(r.role).second)
      throw ConfigError(path + ": duplicate role name '" + r.role + "'");
  }
  for (const std::string& path : cfg.targets) {
    story::RoleSpec r = story::load_role(path, spec);
    if (!names.insert(r.role).second)
      throw ConfigError(path + ": duplicate role name '" + r.role + "'");
  }
}

}  // namespace guild::harness
