#include "guild/harness/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "guild/agent/expert.hpp"
#include "guild/agent/kg_index.hpp"
#include "guild/agent/tokenizer.hpp"
#include "guild/errors.hpp"
#include "guild/moe/ensemble.hpp"
#include "guild/nn/checkpoint.hpp"
#include "guild/nn/rng.hpp"
#include "guild/tw/game_spec.hpp"

namespace guild::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

#if defined(__GNUC__)
__attribute__((format(printf, 2, 3)))
#endif
void appendf(std::string& out, const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  int n = vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  if (n > 0) out.append(buf, std::min(size_t(n), sizeof buf - 1));
}

// Shortest representation that parses back to the same float.
std::string fmt_g(float v) {
  char buf[32];
  snprintf(buf, sizeof buf, "%.9g", double(v));
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(path + ": cannot write file");
  out << text;
  if (!out.flush()) throw ConfigError(path + ": write failed");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open file");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

int64_t parse_i64(const std::string& s, const std::string& where) {
  char* end = nullptr;
  long long v = strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError(where + ": expected an integer, got '" + s + "'");
  return int64_t(v);
}

float parse_f32(const std::string& s, const std::string& where) {
  char* end = nullptr;
  float v = strtof(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError(where + ": expected a number, got '" + s + "'");
  return v;
}

// Everything loaded once per run: the game, its encoders and every role the
// config references.
struct Session {
  tw::GameSpec spec;
  agent::Tokenizer tok;
  agent::KgIndex kgi;
  std::vector<story::RoleSpec> expert_roles;
  std::vector<story::RoleSpec> target_roles;

  explicit Session(const ExperimentConfig& cfg)
      : spec(tw::load_spec(cfg.game)), tok(spec), kgi(spec) {
    for (const std::string& p : cfg.experts) expert_roles.push_back(story::load_role(p, spec));
    for (const std::string& p : cfg.targets) target_roles.push_back(story::load_role(p, spec));
  }

  const story::RoleSpec& find(const std::string& name) const {
    for (const auto& r : expert_roles)
      if (r.role == name) return r;
    for (const auto& r : target_roles)
      if (r.role == name) return r;
    throw ConfigError("role '" + name + "' is not referenced by the config");
  }

  std::string role_path(const ExperimentConfig& cfg, const std::string& name) const {
    for (size_t i = 0; i < expert_roles.size(); ++i)
      if (expert_roles[i].role == name) return cfg.experts[i];
    for (size_t i = 0; i < target_roles.size(); ++i)
      if (target_roles[i].role == name) return cfg.targets[i];
    throw ConfigError("role '" + name + "' is not referenced by the config");
  }
};

struct TrialHooks {
  std::function<void(nn::Rng, int64_t&)> train;
  std::function<agent::EpisodeStats(nn::Rng)> eval_one;
  std::function<void(const std::string&)> save;
  std::function<int64_t()> env_steps;  // optional cross-check after training
};

// Shared train/eval/checkpoint loop. Training is segmented so an evaluation
// lands exactly every eval_cadence env steps (episodes are cut at the mark
// and bootstrap), plus the zero-shot point before any update. Evaluation
// randomness comes from a stream independent of training, and the
// best-evaluating parameters are checkpointed as they appear.
RunRecord run_trial(const ExperimentConfig& cfg, const std::string& experiment, uint64_t seed,
                    int64_t budget, const TrialHooks& hooks, std::string log_head) {
  auto t0 = std::chrono::steady_clock::now();
  fs::path dir = run_dir(cfg, experiment, seed);
  fs::create_directories(dir);

  RunRecord rec;
  rec.config_hash = cfg.hash();
  rec.seed = seed;
  rec.experiment = experiment;
  rec.checkpoint_path = (dir / "checkpoint").string();

  nn::Rng root(seed);
  nn::Rng train_root = root.split("train");
  nn::Rng eval_root = root.split("eval");

  std::string log = std::move(log_head);
  uint64_t episode = 0;
  uint64_t eval_idx = 0;
  int64_t consumed = 0;
  std::optional<CurvePoint> best;

  auto eval_now = [&]() {
    nn::Rng er = eval_root.split(eval_idx++);
    double sum = 0.0, sum_sq = 0.0, steps = 0.0;
    for (int g = 0; g < cfg.eval_games; ++g) {
      agent::EpisodeStats st = hooks.eval_one(er.split(uint64_t(g)));
      sum += st.score;
      sum_sq += double(st.score) * double(st.score);
      steps += st.steps;
    }
    double n = double(cfg.eval_games);
    CurvePoint p;
    p.training_step = consumed;
    p.avg_score = float(sum / n);
    p.avg_steps = float(steps / n);
    double var = sum_sq / n - (sum / n) * (sum / n);
    p.std_score = var > 0.0 ? float(std::sqrt(var)) : 0.0f;
    rec.curve.push_back(p);
    appendf(log, "eval step=%lld avg_score=%s avg_steps=%s std=%s\n", (long long)p.training_step,
            fmt_g(p.avg_score).c_str(), fmt_g(p.avg_steps).c_str(), fmt_g(p.std_score).c_str());
    if (!best || point_better(p, *best)) {
      best = p;
      hooks.save(rec.checkpoint_path);
      appendf(log, "checkpoint step=%lld avg_score=%s\n", (long long)p.training_step,
              fmt_g(p.avg_score).c_str());
    }
  };

  eval_now();
  while (consumed < budget) {
    int64_t mark = std::min(budget, consumed + cfg.eval_cadence);
    int64_t left = mark - consumed;
    while (left > 0) {
      int64_t before = left;
      hooks.train(train_root.split(episode++), left);
      if (left >= before) throw ContractError(experiment + ": training consumed no env steps");
    }
    consumed = mark;
    eval_now();
  }

  if (hooks.env_steps && hooks.env_steps() != budget)
    throw ContractError(experiment + ": env step count does not match the budget");

  rec.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  appendf(log, "episodes %llu\nenv_steps %lld\nwall_clock_sec %.3f\n",
          (unsigned long long)episode, (long long)budget, rec.wall_clock_sec);
  write_curve((dir / "curve.csv").string(), rec.curve);
  write_text((dir / "log").string(), log);
  return rec;
}

std::string trial_head(const ExperimentConfig& cfg, const std::string& experiment,
                       uint64_t seed, const std::string& role) {
  std::string head;
  appendf(head, "experiment %s\nseed %llu\nconfig %s\nrole %s\n", experiment.c_str(),
          (unsigned long long)seed, hash_hex(cfg.hash()).c_str(), role.c_str());
  return head;
}

RunRecord expert_trial(const ExperimentConfig& cfg, const Session& s,
                       const std::string& experiment, const story::RoleSpec& role,
                       uint64_t seed, int64_t budget, agent::Expert expert) {
  agent::ExpertTrainer trainer(expert, s.spec, role, s.tok, s.kgi, cfg.train_config());
  agent::Expert::Raw raw = expert.make_raw();
  TrialHooks hooks;
  hooks.train = [&](nn::Rng r, int64_t& left) { trainer.train_episode(r, left); };
  hooks.eval_one = [&](nn::Rng) {
    return agent::eval_expert_episode(expert, s.spec, role, s.tok, s.kgi, raw);
  };
  hooks.save = [&](const std::string& path) { expert.save(path, cfg.hash()); };
  return run_trial(cfg, experiment, seed, budget, hooks,
                   trial_head(cfg, experiment, seed, role.role));
}

// One frozen seat in an ensemble: a trained checkpoint, or a randomly
// initialized stand-in rebuilt from the run seed.
struct FrozenSource {
  std::string role;
  std::string checkpoint;
  int random_index = -1;
};

agent::Expert load_frozen(const tw::GameSpec& spec, const agent::Tokenizer& tok,
                          const agent::KgIndex& kgi, const agent::ExpertArch& arch,
                          const FrozenSource& src, nn::Rng root) {
  if (!src.checkpoint.empty()) {
    agent::Expert e = agent::Expert::load(src.checkpoint, spec, tok.n_tokens(), kgi.bits());
    if (e.role() != src.role)
      throw ConfigError(src.checkpoint + ": checkpoint role '" + e.role() +
                        "' does not match expected role '" + src.role + "'");
    e.freeze();
    return e;
  }
  agent::Expert e(src.role, spec, tok.n_tokens(), kgi.bits(), arch,
                  root.split("distractor").split(uint64_t(src.random_index)));
  e.freeze();
  return e;
}

json manifest_json(const ExperimentConfig& cfg, const std::string& experiment,
                   const std::string& target_name, const std::string& target_path,
                   uint64_t seed, const std::vector<FrozenSource>& sources) {
  json experts = json::array();
  for (const FrozenSource& src : sources) {
    json e{{"role", src.role}, {"checkpoint", src.checkpoint}, {"frozen", true}};
    if (src.random_index >= 0)
      e["random_index"] = src.random_index;
    else
      e["file_hash"] = hash_hex(nn::hash_file(src.checkpoint));
    experts.push_back(e);
  }
  experts.push_back(json{{"role", target_name}, {"checkpoint", ""}, {"frozen", false}});
  return json{{"experiment", experiment},
              {"target", target_name},
              {"target_file", target_path},
              {"seed", seed},
              {"config_hash", hash_hex(cfg.hash())},
              {"config", json::parse(dump_config(cfg))},
              {"experts", experts}};
}

RunRecord ensemble_trial(const ExperimentConfig& cfg, const Session& s,
                         const std::string& experiment, const story::RoleSpec& target,
                         uint64_t seed, const std::vector<FrozenSource>& sources) {
  nn::Rng root(seed);
  std::vector<agent::Expert> frozen;
  frozen.reserve(sources.size());
  for (const FrozenSource& src : sources)
    frozen.push_back(load_frozen(s.spec, s.tok, s.kgi, cfg.arch, src, root));
  agent::Expert hot(target.role, s.spec, s.tok.n_tokens(), s.kgi.bits(), cfg.arch,
                    root.split("hot"));
  moe::Ensemble ens(std::move(frozen), std::move(hot), s.spec, target, s.tok, s.kgi, cfg.moe,
                    root.split("attn"));

  fs::path dir = run_dir(cfg, experiment, seed);
  fs::create_directories(dir);
  write_text((dir / "manifest.json").string(),
             manifest_json(cfg, experiment, target.role, s.role_path(cfg, target.role), seed,
                           sources)
                     .dump(2) +
                 "\n");

  std::string head = trial_head(cfg, experiment, seed, target.role);
  for (const FrozenSource& src : sources)
    appendf(head, "frozen %s %s\n", src.role.c_str(),
            src.checkpoint.empty() ? "(random init)" : src.checkpoint.c_str());

  TrialHooks hooks;
  hooks.train = [&](nn::Rng r, int64_t& left) { ens.train_episode(r, left); };
  hooks.eval_one = [&](nn::Rng r) { return ens.eval_episode(r); };
  hooks.save = [&](const std::string& path) { ens.save_trainable(path, cfg.hash()); };
  hooks.env_steps = [&]() { return ens.env_steps(); };
  return run_trial(cfg, experiment, seed, cfg.moe_budget, hooks, std::move(head));
}

std::vector<FrozenSource> trained_sources(const ExperimentConfig& cfg, const Session& s) {
  std::vector<std::string> paths = resolve_expert_checkpoints(cfg);
  std::vector<FrozenSource> out;
  for (size_t i = 0; i < paths.size(); ++i)
    out.push_back({s.expert_roles[i].role, paths[i], -1});
  return out;
}

}  // namespace

bool point_better(const CurvePoint& a, const CurvePoint& b) {
  if (a.avg_score != b.avg_score) return a.avg_score > b.avg_score;
  if (a.avg_steps != b.avg_steps) return a.avg_steps < b.avg_steps;
  return a.training_step < b.training_step;
}

const CurvePoint& best_point(const RunRecord& rec) {
  if (rec.curve.empty()) throw ContractError(rec.experiment + ": record has an empty curve");
  const CurvePoint* best = &rec.curve.front();
  for (const CurvePoint& p : rec.curve)
    if (point_better(p, *best)) best = &p;
  return *best;
}

std::string hash_hex(uint64_t h) {
  char buf[24];
  snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return buf;
}

std::string runs_root(const ExperimentConfig& cfg) {
  return (fs::path(cfg.out_root) / hash_hex(cfg.hash())).string();
}

std::string run_dir(const ExperimentConfig& cfg, const std::string& experiment, uint64_t seed) {
  return (fs::path(runs_root(cfg)) / experiment / std::to_string(seed)).string();
}

bool run_exists(const ExperimentConfig& cfg, const std::string& experiment, uint64_t seed) {
  return fs::exists(fs::path(run_dir(cfg, experiment, seed)) / "curve.csv");
}

void write_curve(const std::string& path, const std::vector<CurvePoint>& curve) {
  std::string out = "training_step,avg_score,avg_steps,std_score\n";
  for (const CurvePoint& p : curve)
    appendf(out, "%lld,%s,%s,%s\n", (long long)p.training_step, fmt_g(p.avg_score).c_str(),
            fmt_g(p.avg_steps).c_str(), fmt_g(p.std_score).c_str());
  write_text(path, out);
}

std::vector<CurvePoint> read_curve(const std::string& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != "training_step,avg_score,avg_steps,std_score")
    throw ConfigError(path + ": not a curve file");
  std::vector<CurvePoint> curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f = split_fields(line);
    if (f.size() != 4) throw ConfigError(path + ": malformed row '" + line + "'");
    CurvePoint p;
    p.training_step = parse_i64(f[0], path);
    p.avg_score = parse_f32(f[1], path);
    p.avg_steps = parse_f32(f[2], path);
    p.std_score = parse_f32(f[3], path);
    if (!curve.empty() && p.training_step <= curve.back().training_step)
      throw ConfigError(path + ": training steps must increase");
    curve.push_back(p);
  }
  if (curve.empty()) throw ConfigError(path + ": curve has no rows");
  return curve;
}

RunRecord load_run_record(const ExperimentConfig& cfg, const std::string& experiment,
                          uint64_t seed) {
  fs::path dir = run_dir(cfg, experiment, seed);
  RunRecord rec;
  rec.config_hash = cfg.hash();
  rec.seed = seed;
  rec.experiment = experiment;
  rec.curve = read_curve((dir / "curve.csv").string());
  rec.checkpoint_path = (dir / "checkpoint").string();
  return rec;
}

std::vector<RunRecord> load_all_records(const ExperimentConfig& cfg) {
  fs::path root = runs_root(cfg);
  std::vector<std::pair<std::string, uint64_t>> found;
  if (fs::exists(root)) {
    for (const auto& exp_entry : fs::directory_iterator(root)) {
      if (!exp_entry.is_directory()) continue;
      for (const auto& seed_entry : fs::directory_iterator(exp_entry.path())) {
        if (!seed_entry.is_directory()) continue;
        std::string name = seed_entry.path().filename().string();
        if (name.empty() || name.find_first_not_of("0123456789") != std::string::npos) continue;
        if (!fs::exists(seed_entry.path() / "curve.csv")) continue;
        found.emplace_back(exp_entry.path().filename().string(), strtoull(name.c_str(), nullptr, 10));
      }
    }
  }
  std::sort(found.begin(), found.end());
  std::vector<RunRecord> out;
  for (const auto& [experiment, seed] : found)
    out.push_back(load_run_record(cfg, experiment, seed));
  return out;
}

bool role_relevant(const story::RoleSpec& expert_role, const story::RoleSpec& target) {
  for (const story::Triple& a : expert_role.triples)
    for (const story::Triple& b : target.triples)
      if (a == b) return true;
  return false;
}

std::vector<std::string> resolve_expert_checkpoints(const ExperimentConfig& cfg) {
  if (!cfg.expert_checkpoints.empty()) {
    if (cfg.expert_checkpoints.size() != cfg.experts.size())
      throw ConfigError("expert_checkpoints must give one file per expert role");
    return cfg.expert_checkpoints;
  }
  tw::GameSpec spec = tw::load_spec(cfg.game);
  std::vector<std::string> out;
  for (const std::string& path : cfg.experts) {
    story::RoleSpec role = story::load_role(path, spec);
    std::string experiment = "expert_" + role.role;
    std::optional<CurvePoint> best;
    uint64_t best_seed = 0;
    for (uint64_t seed : cfg.seeds) {
      if (!run_exists(cfg, experiment, seed)) continue;
      RunRecord rec = load_run_record(cfg, experiment, seed);
      const CurvePoint& p = best_point(rec);
      if (!best || point_better(p, *best)) {
        best = p;
        best_seed = seed;
      }
    }
    if (!best)
      throw ConfigError("no trained checkpoint for role '" + role.role +
                        "'; run expert training first");
    std::string ckpt = (fs::path(run_dir(cfg, experiment, best_seed)) / "checkpoint").string();
    if (!fs::exists(ckpt)) throw ConfigError(ckpt + ": checkpoint file is missing");
    out.push_back(ckpt);
  }
  return out;
}

RunRecord train_expert(const ExperimentConfig& cfg, const std::string& role_name,
                       uint64_t seed) {
  Session s(cfg);
  const story::RoleSpec& role = s.find(role_name);
  nn::Rng root(seed);
  agent::Expert e(role.role, s.spec, s.tok.n_tokens(), s.kgi.bits(), cfg.arch,
                  root.split("init"));
  return expert_trial(cfg, s, "expert_" + role.role, role, seed, cfg.expert_budget,
                      std::move(e));
}

RunRecord run_moe(const ExperimentConfig& cfg, const std::string& target_name, uint64_t seed) {
  Session s(cfg);
  const story::RoleSpec& target = s.find(target_name);
  return ensemble_trial(cfg, s, "moe_" + target.role, target, seed, trained_sources(cfg, s));
}

RunRecord run_baseline_scratch(const ExperimentConfig& cfg, const std::string& target_name,
                               uint64_t seed) {
  Session s(cfg);
  const story::RoleSpec& target = s.find(target_name);
  nn::Rng root(seed);
  agent::Expert e(target.role, s.spec, s.tok.n_tokens(), s.kgi.bits(), cfg.arch,
                  root.split("init"));
  return expert_trial(cfg, s, "scratch_" + target.role, target, seed, cfg.moe_budget,
                      std::move(e));
}

RunRecord run_baseline_finetune(const ExperimentConfig& cfg,
                                const std::string& expert_checkpoint,
                                const std::string& target_name, uint64_t seed) {
  Session s(cfg);
  const story::RoleSpec& target = s.find(target_name);
  agent::Expert e =
      agent::Expert::load(expert_checkpoint, s.spec, s.tok.n_tokens(), s.kgi.bits());
  e.thaw();
  std::string experiment = "finetune_" + e.role() + "_" + target.role;
  return expert_trial(cfg, s, experiment, target, seed, cfg.moe_budget, std::move(e));
}

std::vector<RunRecord> run_finetune_all(const ExperimentConfig& cfg,
                                        const std::string& target_name, uint64_t seed) {
  std::vector<std::string> paths = resolve_expert_checkpoints(cfg);
  std::vector<RunRecord> out;
  out.reserve(paths.size());
  for (const std::string& p : paths)
    out.push_back(run_baseline_finetune(cfg, p, target_name, seed));
  return out;
}

RunRecord run_ablation(const ExperimentConfig& cfg, const std::string& target_name,
                       AblationKind kind, uint64_t seed) {
  if (kind == AblationKind::none)
    throw ConfigError("ablation kind 'none' does not select an experiment");
  Session s(cfg);
  const story::RoleSpec& target = s.find(target_name);
  std::vector<FrozenSource> sources = trained_sources(cfg, s);

  if (kind == AblationKind::distractor4) {
    for (int j = 0; j < 4; ++j)
      sources.push_back({"distractor_" + std::to_string(j + 1), "", j});
    return ensemble_trial(cfg, s, "distractor4_" + target.role, target, seed, sources);
  }

  std::vector<FrozenSource> irrelevant;
  for (size_t i = 0; i < sources.size(); ++i)
    if (!role_relevant(s.expert_roles[i], target)) irrelevant.push_back(sources[i]);
  if (irrelevant.empty())
    throw ConfigError("irrelevant_only: every expert shares behaviors with target '" +
                      target.role + "'");
  return ensemble_trial(cfg, s, "irrelevant_only_" + target.role, target, seed, irrelevant);
}

namespace {

// Steps at which every record has an evaluation, in order.
std::vector<int64_t> shared_steps(const std::vector<RunRecord>& records) {
  std::vector<int64_t> steps;
  for (const CurvePoint& p : records.front().curve) {
    bool everywhere = true;
    for (const RunRecord& rec : records) {
      bool here = false;
      for (const CurvePoint& q : rec.curve)
        if (q.training_step == p.training_step) {
          here = true;
          break;
        }
      everywhere = everywhere && here;
    }
    if (everywhere) steps.push_back(p.training_step);
  }
  return steps;
}

float score_at(const RunRecord& rec, int64_t step) {
  for (const CurvePoint& p : rec.curve)
    if (p.training_step == step) return p.avg_score;
  throw ContractError(rec.experiment + ": no evaluation at the requested step");
}

void svg_line_chart(const std::string& path, const std::string& title,
                    const std::vector<int64_t>& steps, const std::vector<float>& mean,
                    const std::vector<float>& sd) {
  const double W = 640, H = 400, L = 56, R = 18, T = 36, B = 46;
  double xmax = 1.0;
  for (int64_t s : steps) xmax = std::max(xmax, double(s));
  double ymax = 1.0;
  for (size_t i = 0; i < mean.size(); ++i) ymax = std::max(ymax, double(mean[i]) + double(sd[i]));
  ymax *= 1.05;
  auto px = [&](double x) { return L + (W - L - R) * (x / xmax); };
  auto py = [&](double y) { return H - B - (H - T - B) * (y / ymax); };

  std::string s;
  appendf(s,
          "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
          "viewBox=\"0 0 %.0f %.0f\" font-family=\"sans-serif\">\n",
          W, H, W, H);
  appendf(s, "<rect width=\"%.0f\" height=\"%.0f\" fill=\"white\"/>\n", W, H);
  appendf(s, "<text x=\"%.1f\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">",
          L + (W - L - R) / 2);
  s += title + "</text>\n";

  for (int i = 0; i <= 4; ++i) {
    double xv = xmax * i / 4.0;
    double yv = ymax * i / 4.0;
    appendf(s,
            "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n",
            px(xv), py(0), px(xv), py(ymax));
    appendf(s,
            "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n",
            px(0), py(yv), px(xmax), py(yv));
    appendf(s, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" font-size=\"11\">%lld</text>\n",
            px(xv), H - B + 16, (long long)llround(xv));
    appendf(s, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\" font-size=\"11\">%.1f</text>\n",
            L - 6, py(yv) + 4, yv);
  }
  appendf(s, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", px(0),
          py(0), px(xmax), py(0));
  appendf(s, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", px(0),
          py(0), px(0), py(ymax));
  appendf(s, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" font-size=\"12\">training steps</text>\n",
          L + (W - L - R) / 2, H - 10);
  appendf(s,
          "<text x=\"14\" y=\"%.1f\" text-anchor=\"middle\" font-size=\"12\" "
          "transform=\"rotate(-90 14 %.1f)\">avg score</text>\n",
          T + (H - T - B) / 2, T + (H - T - B) / 2);

  if (steps.size() >= 2) {
    std::string band = "<polygon points=\"";
    for (size_t i = 0; i < steps.size(); ++i)
      appendf(band, "%.2f,%.2f ", px(double(steps[i])), py(double(mean[i]) + double(sd[i])));
    for (size_t i = steps.size(); i-- > 0;)
      appendf(band, "%.2f,%.2f ", px(double(steps[i])),
              py(std::max(0.0, double(mean[i]) - double(sd[i]))));
    band += "\" fill=\"#9ecae1\" fill-opacity=\"0.45\" stroke=\"none\"/>\n";
    s += band;
    std::string line = "<polyline points=\"";
    for (size_t i = 0; i < steps.size(); ++i)
      appendf(line, "%.2f,%.2f ", px(double(steps[i])), py(double(mean[i])));
    line += "\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n";
    s += line;
  }
  for (size_t i = 0; i < steps.size(); ++i)
    appendf(s, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\" fill=\"#1f77b4\"/>\n",
            px(double(steps[i])), py(double(mean[i])));
  s += "</svg>\n";
  write_text(path, s);
}

}  // namespace

void aggregate_and_emit(const std::vector<RunRecord>& records, const std::string& out_dir) {
  if (records.empty()) throw ConfigError("aggregate_and_emit: no run records");
  fs::create_directories(out_dir);

  std::map<std::string, std::vector<const RunRecord*>> groups;
  for (const RunRecord& rec : records) groups[rec.experiment].push_back(&rec);
  for (auto& [name, group] : groups) {
    (void)name;
    std::sort(group.begin(), group.end(),
              [](const RunRecord* a, const RunRecord* b) { return a->seed < b->seed; });
  }

  std::string summary = "experiment,seed,avg_score,avg_steps,training_steps\n";
  for (const auto& [name, group] : groups) {
    std::string csv = "experiment,seed,training_step,avg_score,avg_steps,std_score\n";
    for (const RunRecord* rec : group)
      for (const CurvePoint& p : rec->curve)
        appendf(csv, "%s,%llu,%lld,%s,%s,%s\n", name.c_str(), (unsigned long long)rec->seed,
                (long long)p.training_step, fmt_g(p.avg_score).c_str(),
                fmt_g(p.avg_steps).c_str(), fmt_g(p.std_score).c_str());
    write_text((fs::path(out_dir) / (name + ".csv")).string(), csv);

    std::vector<const RunRecord*> ranked = group;
    std::sort(ranked.begin(), ranked.end(), [](const RunRecord* a, const RunRecord* b) {
      const CurvePoint& pa = best_point(*a);
      const CurvePoint& pb = best_point(*b);
      if (pa == pb) return a->seed < b->seed;
      return point_better(pa, pb);
    });
    for (const RunRecord* rec : ranked) {
      const CurvePoint& p = best_point(*rec);
      appendf(summary, "%s,%llu,%s,%s,%lld\n", name.c_str(), (unsigned long long)rec->seed,
              fmt_g(p.avg_score).c_str(), fmt_g(p.avg_steps).c_str(),
              (long long)p.training_step);
    }

    std::vector<RunRecord> copies;
    copies.reserve(group.size());
    for (const RunRecord* rec : group) copies.push_back(*rec);
    std::vector<int64_t> steps = shared_steps(copies);
    std::vector<float> mean, sd;
    for (int64_t step : steps) {
      double sum = 0.0, sum_sq = 0.0;
      for (const RunRecord* rec : group) {
        double v = score_at(*rec, step);
        sum += v;
        sum_sq += v * v;
      }
      double n = double(group.size());
      double mu = sum / n;
      double var = sum_sq / n - mu * mu;
      mean.push_back(float(mu));
      sd.push_back(var > 0.0 ? float(std::sqrt(var)) : 0.0f);
    }
    svg_line_chart((fs::path(out_dir) / (name + ".svg")).string(), name, steps, mean, sd);
  }
  write_text((fs::path(out_dir) / "summary.csv").string(), summary);
}

std::vector<RunRecord> read_experiment_csv(const std::string& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) ||
      line != "experiment,seed,training_step,avg_score,avg_steps,std_score")
    throw ConfigError(path + ": not an experiment csv");
  std::vector<RunRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f = split_fields(line);
    if (f.size() != 6) throw ConfigError(path + ": malformed row '" + line + "'");
    uint64_t seed = uint64_t(parse_i64(f[1], path));
    if (out.empty() || out.back().experiment != f[0] || out.back().seed != seed) {
      RunRecord rec;
      rec.experiment = f[0];
      rec.seed = seed;
      out.push_back(rec);
    }
    CurvePoint p;
    p.training_step = parse_i64(f[2], path);
    p.avg_score = parse_f32(f[3], path);
    p.avg_steps = parse_f32(f[4], path);
    p.std_score = parse_f32(f[5], path);
    out.back().curve.push_back(p);
  }
  return out;
}

EvalReport eval_expert_checkpoint(const std::string& checkpoint, const std::string& game_path,
                                  const std::string& role_path, int games, uint64_t seed) {
  (void)seed;  // greedy play on a deterministic game draws nothing
  if (games <= 0) throw ConfigError("eval games must be positive");
  tw::GameSpec spec = tw::load_spec(game_path);
  story::RoleSpec role = story::load_role(role_path, spec);
  agent::Tokenizer tok(spec);
  agent::KgIndex kgi(spec);
  agent::Expert e = agent::Expert::load(checkpoint, spec, tok.n_tokens(), kgi.bits());
  agent::Expert::Raw raw = e.make_raw();
  EvalReport rep;
  double sum = 0.0, steps = 0.0;
  for (int g = 0; g < games; ++g) {
    agent::EpisodeStats st = agent::eval_expert_episode(e, spec, role, tok, kgi, raw);
    rep.games.push_back(st);
    sum += st.score;
    steps += st.steps;
  }
  rep.avg_score = float(sum / games);
  rep.avg_steps = float(steps / games);
  return rep;
}

EvalReport eval_manifest(const std::string& manifest_path, const std::string& checkpoint,
                         int games, uint64_t seed) {
  if (games <= 0) throw ConfigError("eval games must be positive");
  json m;
  try {
    m = json::parse(read_text(manifest_path));
  } catch (const json::exception& e) {
    throw ConfigError(manifest_path + ": parse error: " + e.what());
  }
  ExperimentConfig cfg;
  std::string target_file;
  uint64_t run_seed = 0;
  std::vector<FrozenSource> sources;
  try {
    cfg = parse_config(m.at("config").dump(), manifest_path);
    target_file = m.at("target_file").get<std::string>();
    run_seed = m.at("seed").get<uint64_t>();
    for (const json& e : m.at("experts")) {
      if (!e.at("frozen").get<bool>()) continue;
      FrozenSource src;
      src.role = e.at("role").get<std::string>();
      src.checkpoint = e.at("checkpoint").get<std::string>();
      if (e.contains("random_index")) src.random_index = e.at("random_index").get<int>();
      sources.push_back(src);
    }
  } catch (const json::exception& e) {
    throw ConfigError(manifest_path + ": " + e.what());
  }

  tw::GameSpec spec = tw::load_spec(cfg.game);
  agent::Tokenizer tok(spec);
  agent::KgIndex kgi(spec);
  story::RoleSpec target = story::load_role(target_file, spec);
  nn::Rng root(run_seed);
  std::vector<agent::Expert> frozen;
  for (const FrozenSource& src : sources)
    frozen.push_back(load_frozen(spec, tok, kgi, cfg.arch, src, root));
  agent::Expert hot(target.role, spec, tok.n_tokens(), kgi.bits(), cfg.arch,
                    root.split("hot"));
  moe::Ensemble ens(std::move(frozen), std::move(hot), spec, target, tok, kgi, cfg.moe,
                    root.split("attn"));
  ens.restore_trainable(checkpoint);

  nn::Rng eval_root = nn::Rng(seed).split("cmd-eval");
  EvalReport rep;
  double sum = 0.0, steps = 0.0;
  for (int g = 0; g < games; ++g) {
    agent::EpisodeStats st = ens.eval_episode(eval_root.split(uint64_t(g)));
    rep.games.push_back(st);
    sum += st.score;
    steps += st.steps;
  }
  rep.avg_score = float(sum / games);
  rep.avg_steps = float(steps / games);
  return rep;
}

}  // namespace guild::harness
