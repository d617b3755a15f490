#include <CLI11.hpp>

#include <algorithm>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "guild/errors.hpp"
#include "guild/harness/config.hpp"
#include "guild/harness/run.hpp"
#include "guild/nn/checkpoint.hpp"
#include "guild/story/story.hpp"
#include "guild/tw/engine.hpp"
#include "guild/tw/game_spec.hpp"

namespace fs = std::filesystem;
namespace harness = guild::harness;
namespace story = guild::story;
namespace tw = guild::tw;
using guild::ConfigError;

namespace {

[[gnu::format(printf, 2, 3)]] void appendf(std::string& out, const char* fmt, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, fmt);
  int n = vsnprintf(buf, sizeof buf, fmt, ap);
  va_end(ap);
  if (n > 0) out.append(buf, std::min<size_t>(static_cast<size_t>(n), sizeof buf - 1));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  f.flush();
  if (!f) throw guild::ContractError("failed to write " + path);
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += items[i];
  }
  return out;
}

// A role argument is either a file path or a bare name looked up next to the
// game spec (e.g. data/world.json + "thief" -> data/roles/thief.json).
std::string resolve_role_path(const std::string& arg, const std::string& game_path) {
  if (fs::exists(arg)) return arg;
  fs::path dir = fs::path(game_path).parent_path() / "roles";
  fs::path cand = dir / (arg + ".json");
  if (fs::exists(cand)) return cand.string();
  throw ConfigError("role '" + arg + "' is neither a file nor a name under " + dir.string());
}

// Flag mirror of ExperimentConfig. Every option records an applier that only
// fires when the flag was actually given, so flags override the config file
// field by field.
struct ConfigCli {
  std::string config_path;
  bool dump = false;

  std::string game, ablation, out_root;
  std::vector<std::string> experts, targets, expert_checkpoints, baselines;
  std::vector<uint64_t> seeds;
  int64_t expert_budget = 0, moe_budget = 0, eval_cadence = 0, epsilon_horizon = 0;
  int eval_games = 0;
  int token_embed = 0, gru_hidden = 0, state_dim = 0, tmpl_embed = 0, obj_embed = 0;
  int kg_proj = 0, critic_hidden = 0, state_bottleneck = 0, dist_bottleneck = 0;
  float gamma = 0.0f, value_coef = 0.0f, entropy_coef = 0.0f, lr = 0.0f, grad_clip = 0.0f;
  float flatten_coef = 0.0f, v_floor = 0.0f, epsilon_initial = 0.0f;
  bool attend_frozen_only = false;

  std::vector<std::pair<CLI::Option*, std::function<void(harness::ExperimentConfig&)>>> appliers;

  void wire(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config JSON")->check(CLI::ExistingFile);
    cmd->add_flag("--dump-config", dump, "print the resolved config and exit");
    auto opt = [&](const char* name, auto& slot, const char* desc, auto apply) {
      CLI::Option* o = cmd->add_option(name, slot, desc);
      appliers.emplace_back(o,
                            [&slot, apply](harness::ExperimentConfig& c) { apply(c, slot); });
    };
    opt("--game", game, "game spec path", [](auto& c, auto& v) { c.game = v; });
    opt("--experts", experts, "expert role files", [](auto& c, auto& v) { c.experts = v; });
    opt("--targets", targets, "target role files", [](auto& c, auto& v) { c.targets = v; });
    opt("--expert-checkpoints", expert_checkpoints, "pin frozen experts to checkpoint files",
        [](auto& c, auto& v) { c.expert_checkpoints = v; });
    opt("--expert-budget", expert_budget, "env steps per expert run",
        [](auto& c, auto& v) { c.expert_budget = v; });
    opt("--moe-budget", moe_budget, "env steps per transfer run",
        [](auto& c, auto& v) { c.moe_budget = v; });
    opt("--eval-cadence", eval_cadence, "env steps between evaluations",
        [](auto& c, auto& v) { c.eval_cadence = v; });
    opt("--eval-games", eval_games, "episodes per evaluation",
        [](auto& c, auto& v) { c.eval_games = v; });
    opt("--seeds", seeds, "run seeds", [](auto& c, auto& v) { c.seeds = v; });
    opt("--baselines", baselines, "baseline kinds the baseline command runs",
        [](auto& c, auto& v) { c.baselines = v; });
    opt("--ablation", ablation, "ablation kind the ablate command runs",
        [](auto& c, auto& v) { c.ablation = harness::parse_ablation(v); });
    opt("--out-root", out_root, "output root directory",
        [](auto& c, auto& v) { c.out_root = v; });
    opt("--token-embed", token_embed, "token embedding width",
        [](auto& c, auto& v) { c.arch.token_embed = v; });
    opt("--gru-hidden", gru_hidden, "text encoder hidden width",
        [](auto& c, auto& v) { c.arch.gru_hidden = v; });
    opt("--state-dim", state_dim, "state embedding width",
        [](auto& c, auto& v) { c.arch.state_dim = v; });
    opt("--tmpl-embed", tmpl_embed, "template embedding width",
        [](auto& c, auto& v) { c.arch.tmpl_embed = v; });
    opt("--obj-embed", obj_embed, "object embedding width",
        [](auto& c, auto& v) { c.arch.obj_embed = v; });
    opt("--kg-proj", kg_proj, "fact vector projection width",
        [](auto& c, auto& v) { c.arch.kg_proj = v; });
    opt("--critic-hidden", critic_hidden, "critic hidden width",
        [](auto& c, auto& v) { c.arch.critic_hidden = v; });
    opt("--gamma", gamma, "discount factor", [](auto& c, auto& v) { c.moe.gamma = v; });
    opt("--value-coef", value_coef, "critic loss weight",
        [](auto& c, auto& v) { c.moe.value_coef = v; });
    opt("--entropy-coef", entropy_coef, "entropy bonus weight",
        [](auto& c, auto& v) { c.moe.entropy_coef = v; });
    opt("--lr", lr, "Adam learning rate", [](auto& c, auto& v) { c.moe.adam.lr = v; });
    opt("--grad-clip", grad_clip, "gradient norm clip",
        [](auto& c, auto& v) { c.moe.adam.clip_norm = v; });
    opt("--flatten-coef", flatten_coef, "frozen-expert flatten loss weight",
        [](auto& c, auto& v) { c.moe.flatten_coef = v; });
    opt("--v-floor", v_floor, "value seed clamp floor",
        [](auto& c, auto& v) { c.moe.v_floor = v; });
    opt("--state-bottleneck", state_bottleneck, "attention state tower width",
        [](auto& c, auto& v) { c.moe.state_bottleneck = v; });
    opt("--dist-bottleneck", dist_bottleneck, "attention distribution tower width",
        [](auto& c, auto& v) { c.moe.dist_bottleneck = v; });
    opt("--epsilon-initial", epsilon_initial, "exploration rate at step 0",
        [](auto& c, auto& v) { c.moe.epsilon.initial = v; });
    opt("--epsilon-horizon", epsilon_horizon, "step at which exploration reaches zero",
        [](auto& c, auto& v) { c.moe.epsilon.horizon = v; });
    CLI::Option* afo = cmd->add_flag("--attend-frozen-only,!--no-attend-frozen-only",
                                     attend_frozen_only,
                                     "restrict attention weights to the frozen experts");
    appliers.emplace_back(afo, [this](harness::ExperimentConfig& c) {
      c.moe.attend_frozen_only = attend_frozen_only;
    });
  }

  harness::ExperimentConfig resolve() const {
    harness::ExperimentConfig cfg = config_path.empty()
                                        ? harness::parse_config("{}", "<defaults>")
                                        : harness::load_config(config_path);
    for (const auto& [o, fn] : appliers)
      if (o->count() > 0) fn(cfg);
    return cfg;
  }
};

std::vector<std::string> role_names(const harness::ExperimentConfig& cfg,
                                    const std::vector<std::string>& paths) {
  tw::GameSpec spec = tw::load_spec(cfg.game);
  std::vector<std::string> names;
  names.reserve(paths.size());
  for (const std::string& p : paths) names.push_back(story::load_role(p, spec).role);
  return names;
}

std::vector<std::string> pick(const std::vector<std::string>& all,
                              const std::vector<std::string>& only, const char* what) {
  if (only.empty()) return all;
  for (const std::string& o : only)
    if (std::find(all.begin(), all.end(), o) == all.end())
      throw ConfigError(std::string(what) + " '" + o + "' is not in the config (have: " +
                        join(all) + ")");
  return only;
}

template <typename Fn>
void run_or_skip(const harness::ExperimentConfig& cfg, const std::string& experiment,
                 uint64_t seed, bool force, Fn fn) {
  if (!force && harness::run_exists(cfg, experiment, seed)) {
    std::printf("%s seed %llu: exists, skipping (--force retrains)\n", experiment.c_str(),
                static_cast<unsigned long long>(seed));
    return;
  }
  harness::RunRecord rec = fn();
  const harness::CurvePoint& best = harness::best_point(rec);
  std::printf("%s seed %llu: best score %.9g at step %lld (%.1fs)\n", experiment.c_str(),
              static_cast<unsigned long long>(seed), static_cast<double>(best.avg_score),
              static_cast<long long>(best.training_step), rec.wall_clock_sec);
  std::fflush(stdout);
}

void refresh_summary(const harness::ExperimentConfig& cfg) {
  std::vector<harness::RunRecord> records = harness::load_all_records(cfg);
  if (records.empty()) throw ConfigError("no completed runs under " + harness::runs_root(cfg));
  harness::aggregate_and_emit(records, harness::runs_root(cfg));
  std::printf("summary: %s/summary.csv\n", harness::runs_root(cfg).c_str());
}

int cmd_play(const std::string& game_path, const std::string& role_arg) {
  tw::GameSpec spec = tw::load_spec(game_path);
  story::RoleSpec role = story::load_role(resolve_role_path(role_arg, game_path), spec);
  tw::WorldState state = tw::reset(spec);
  story::RewardTracker tracker(spec, role);
  tracker.reset(state);
  double max_score = role.max_score();
  std::fputs(tw::render(tw::observe(state, spec)).c_str(), stdout);
  std::printf("[%s] score 0 / %g\n", role.role.c_str(), max_score);
  std::string line;
  while (!state.done) {
    std::printf("> ");
    std::fflush(stdout);
    if (!std::getline(std::cin, line)) break;
    line = trim(line);
    if (line.empty()) continue;
    if (line == "quit") break;
    tw::ParseResult pr = tw::parse_command(line, spec);
    if (!pr.ok) {
      std::printf("%s\n", pr.feedback.c_str());
      continue;
    }
    tw::Observation obs = tw::step(state, spec, pr.action);
    tracker.on_step(state);
    std::fputs(tw::render(obs).c_str(), stdout);
    std::printf("[%s] score %g / %g\n", role.role.c_str(),
                static_cast<double>(tracker.score()), max_score);
  }
  std::printf("\nfinal score: %g / %g\n", static_cast<double>(tracker.score()), max_score);
  std::printf("matched behaviors (%zu of %zu):\n", tracker.matched(), role.triples.size());
  for (const story::Triple& t : role.triples)
    std::printf("  [%c] %s\n", tracker.ledger().rewarded(t) ? 'x' : ' ',
                story::to_string(t).c_str());
  return 0;
}

struct EvalOpts {
  std::string checkpoint, manifest, game = "data/world.json", role;
  int games = 10;
  uint64_t seed = 1;
};

std::string eval_report_text(const harness::EvalReport& rep) {
  std::string out;
  for (size_t i = 0; i < rep.games.size(); ++i)
    appendf(out, "game %zu: score %.9g steps %d goal %s\n", i + 1,
            static_cast<double>(rep.games[i].score), rep.games[i].steps,
            rep.games[i].reached_goal ? "yes" : "no");
  appendf(out, "avg_score %.9g\navg_steps %.9g\n", static_cast<double>(rep.avg_score),
          static_cast<double>(rep.avg_steps));
  return out;
}

int cmd_eval(const EvalOpts& o) {
  harness::EvalReport rep;
  fs::path report_dir;
  if (!o.manifest.empty()) {
    std::string ckpt = o.checkpoint.empty()
                           ? (fs::path(o.manifest).parent_path() / "checkpoint").string()
                           : o.checkpoint;
    rep = harness::eval_manifest(o.manifest, ckpt, o.games, o.seed);
    report_dir = fs::path(o.manifest).parent_path();
  } else if (!o.checkpoint.empty()) {
    if (o.role.empty()) throw ConfigError("eval --checkpoint needs --role");
    std::string role_path = resolve_role_path(o.role, o.game);
    rep = harness::eval_expert_checkpoint(o.checkpoint, o.game, role_path, o.games, o.seed);
    report_dir = fs::path(o.checkpoint).parent_path();
  } else {
    throw ConfigError("eval needs --checkpoint or --manifest");
  }
  std::string text = eval_report_text(rep);
  std::fputs(text.c_str(), stdout);
  std::string report_path = (report_dir / "eval_report.txt").string();
  write_text(report_path, text);
  std::printf("report: %s\n", report_path.c_str());
  return 0;
}

int cmd_train_expert(const ConfigCli& cli, const std::vector<std::string>& only, bool force) {
  harness::ExperimentConfig cfg = cli.resolve();
  if (cli.dump) {
    std::fputs(harness::dump_config(cfg).c_str(), stdout);
    return 0;
  }
  harness::validate(cfg);
  for (const std::string& role : pick(role_names(cfg, cfg.experts), only, "role"))
    for (uint64_t seed : cfg.seeds)
      run_or_skip(cfg, "expert_" + role, seed, force,
                  [&] { return harness::train_expert(cfg, role, seed); });
  refresh_summary(cfg);
  return 0;
}

int cmd_train_moe(const ConfigCli& cli, const std::vector<std::string>& only, bool force) {
  harness::ExperimentConfig cfg = cli.resolve();
  if (cli.dump) {
    std::fputs(harness::dump_config(cfg).c_str(), stdout);
    return 0;
  }
  harness::validate(cfg);
  for (const std::string& target : pick(role_names(cfg, cfg.targets), only, "target"))
    for (uint64_t seed : cfg.seeds)
      run_or_skip(cfg, "moe_" + target, seed, force,
                  [&] { return harness::run_moe(cfg, target, seed); });
  refresh_summary(cfg);
  return 0;
}

int cmd_baseline(const ConfigCli& cli, const std::vector<std::string>& only,
                 const std::string& kind_flag, bool force) {
  harness::ExperimentConfig cfg = cli.resolve();
  if (cli.dump) {
    std::fputs(harness::dump_config(cfg).c_str(), stdout);
    return 0;
  }
  harness::validate(cfg);
  std::vector<std::string> kinds =
      kind_flag.empty() ? cfg.baselines : std::vector<std::string>{kind_flag};
  std::vector<std::string> targets = pick(role_names(cfg, cfg.targets), only, "target");
  for (const std::string& kind : kinds) {
    if (kind == "scratch") {
      for (const std::string& target : targets)
        for (uint64_t seed : cfg.seeds)
          run_or_skip(cfg, "scratch_" + target, seed, force,
                      [&] { return harness::run_baseline_scratch(cfg, target, seed); });
    } else {
      for (const std::string& ckpt : harness::resolve_expert_checkpoints(cfg)) {
        std::string role = guild::nn::peek_checkpoint(ckpt).role;
        for (const std::string& target : targets)
          for (uint64_t seed : cfg.seeds)
            run_or_skip(cfg, "finetune_" + role + "_" + target, seed, force, [&] {
              return harness::run_baseline_finetune(cfg, ckpt, target, seed);
            });
      }
    }
  }
  refresh_summary(cfg);
  return 0;
}

int cmd_ablate(const ConfigCli& cli, const std::vector<std::string>& only,
               const std::string& kind_flag, bool force) {
  harness::ExperimentConfig cfg = cli.resolve();
  if (cli.dump) {
    std::fputs(harness::dump_config(cfg).c_str(), stdout);
    return 0;
  }
  harness::validate(cfg);
  harness::AblationKind kind =
      kind_flag.empty() ? cfg.ablation : harness::parse_ablation(kind_flag);
  if (kind == harness::AblationKind::none)
    throw ConfigError("ablation kind is 'none'; pass --kind or set it in the config");
  for (const std::string& target : pick(role_names(cfg, cfg.targets), only, "target"))
    for (uint64_t seed : cfg.seeds)
      run_or_skip(cfg, harness::to_string(kind) + "_" + target, seed, force,
                  [&] { return harness::run_ablation(cfg, target, kind, seed); });
  refresh_summary(cfg);
  return 0;
}

int cmd_plot(const ConfigCli& cli) {
  harness::ExperimentConfig cfg = cli.resolve();
  if (cli.dump) {
    std::fputs(harness::dump_config(cfg).c_str(), stdout);
    return 0;
  }
  refresh_summary(cfg);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"story-role reinforcement learning workbench"};
  app.require_subcommand(1);

  CLI::App* play = app.add_subcommand("play", "drive one episode with typed commands");
  std::string play_game = "data/world.json";
  std::string play_role;
  play->add_option("--game", play_game, "game spec JSON")->capture_default_str();
  play->add_option("--role", play_role, "role name or role file")->required();

  CLI::App* tex = app.add_subcommand("train-expert", "pre-train the frozen-pool experts");
  ConfigCli tex_cli;
  tex_cli.wire(tex);
  std::vector<std::string> tex_only;
  bool tex_force = false;
  tex->add_option("--role", tex_only, "train only these expert roles");
  tex->add_flag("--force", tex_force, "retrain runs that already exist");

  CLI::App* tmo = app.add_subcommand("train-moe", "train the ensemble on target roles");
  ConfigCli tmo_cli;
  tmo_cli.wire(tmo);
  std::vector<std::string> tmo_only;
  bool tmo_force = false;
  tmo->add_option("--target", tmo_only, "train only these target roles");
  tmo->add_flag("--force", tmo_force, "retrain runs that already exist");

  CLI::App* bas = app.add_subcommand("baseline", "run scratch and fine-tune baselines");
  ConfigCli bas_cli;
  bas_cli.wire(bas);
  std::vector<std::string> bas_only;
  std::string bas_kind;
  bool bas_force = false;
  bas->add_option("--target", bas_only, "run only these target roles");
  bas->add_option("--kind", bas_kind, "baseline kind")
      ->check(CLI::IsMember({"scratch", "finetune"}));
  bas->add_flag("--force", bas_force, "rerun runs that already exist");

  CLI::App* abl = app.add_subcommand("ablate", "run expert-pool ablations");
  ConfigCli abl_cli;
  abl_cli.wire(abl);
  std::vector<std::string> abl_only;
  std::string abl_kind;
  bool abl_force = false;
  abl->add_option("--target", abl_only, "run only these target roles");
  abl->add_option("--kind", abl_kind, "ablation kind")
      ->check(CLI::IsMember({"distractor4", "irrelevant_only"}));
  abl->add_flag("--force", abl_force, "rerun runs that already exist");

  CLI::App* evl = app.add_subcommand("eval", "evaluate a checkpoint or a run manifest");
  EvalOpts evl_opts;
  evl->add_option("--checkpoint", evl_opts.checkpoint,
                  "expert checkpoint (or the trainable checkpoint when --manifest is given)");
  evl->add_option("--manifest", evl_opts.manifest, "ensemble run manifest.json");
  evl->add_option("--game", evl_opts.game, "game spec JSON")->capture_default_str();
  evl->add_option("--role", evl_opts.role, "role name or role file (checkpoint mode)");
  evl->add_option("--games", evl_opts.games, "evaluation episodes")->capture_default_str();
  evl->add_option("--seed", evl_opts.seed, "evaluation seed")->capture_default_str();

  CLI::App* plt = app.add_subcommand("plot", "rebuild summary tables and curve charts");
  ConfigCli plt_cli;
  plt_cli.wire(plt);

  try {
    app.parse(argc, argv);
    if (*play) return cmd_play(play_game, play_role);
    if (*tex) return cmd_train_expert(tex_cli, tex_only, tex_force);
    if (*tmo) return cmd_train_moe(tmo_cli, tmo_only, tmo_force);
    if (*bas) return cmd_baseline(bas_cli, bas_only, bas_kind, bas_force);
    if (*abl) return cmd_ablate(abl_cli, abl_only, abl_kind, abl_force);
    if (*evl) return cmd_eval(evl_opts);
    if (*plt) return cmd_plot(plt_cli);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
