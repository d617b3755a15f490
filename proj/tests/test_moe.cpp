#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "guild/agent/expert.hpp"
#include "guild/agent/kg_index.hpp"
#include "guild/agent/tokenizer.hpp"
#include "guild/agent/train.hpp"
#include "guild/errors.hpp"
#include "guild/moe/attention.hpp"
#include "guild/moe/ensemble.hpp"
#include "guild/story/story.hpp"
#include "guild/tw/engine.hpp"
#include "guild/tw/game_spec.hpp"
#include "support/refmoe.hpp"

using guild::ConfigError;
using guild::ContractError;
using guild::agent::EpisodeStats;
using guild::agent::Expert;
using guild::agent::ExpertArch;
using guild::agent::KgIndex;
using guild::agent::Tokenizer;
using guild::moe::AttentionModule;
using guild::moe::Ensemble;
using guild::moe::EpsilonSchedule;
using guild::moe::MoeConfig;
using guild::moe::StepTrace;
using guild::nn::Rng;
using guild::nn::Tape;
using guild::nn::ValueRef;
using guild::story::RewardTracker;
using guild::story::RoleSpec;
using guild::tw::Action;
using guild::tw::GameSpec;
using guild::tw::WorldState;

namespace {

const char* kGradSpec = R"({
  "episode_cap": 12,
  "vocabulary": ["east", "west", "coin", "chest", "rat"],
  "templates": [
    {"name": "go", "verbs": ["go"], "slots": 1},
    {"name": "take", "verbs": ["take"], "slots": 1},
    {"name": "put", "verbs": ["put"], "slots": 2, "prepositions": ["by"]},
    {"name": "hit", "verbs": ["hit"], "slots": 1},
    {"name": "look", "verbs": ["look"], "slots": 0}
  ],
  "rooms": [
    {"id": "cell", "description": "A bare cell.", "start": true, "exits": {"east": "yard"}},
    {"id": "yard", "description": "An open yard.", "goal": true, "exits": {"west": "cell"}}
  ],
  "entities": [
    {"name": "coin", "kind": "item", "location": "cell", "portable": true},
    {"name": "chest", "kind": "item", "location": "cell", "portable": false},
    {"name": "rat", "kind": "creature", "location": "cell"}
  ]
})";

const char* kGradRole = R"({
  "role": "collector",
  "triple_reward": 6,
  "goal_bonus": 5,
  "triples": [
    {"subject": "you", "relation": "have", "object": "coin"},
    {"subject": "you", "relation": "hit", "object": "rat"}
  ]
})";

const char* kCorridorSpec = R"({
  "episode_cap": 10,
  "vocabulary": ["east", "west", "coin"],
  "templates": [
    {"name": "go", "verbs": ["go"], "slots": 1},
    {"name": "take", "verbs": ["take"], "slots": 1},
    {"name": "drop", "verbs": ["drop"], "slots": 1},
    {"name": "look", "verbs": ["look"], "slots": 0}
  ],
  "rooms": [
    {"id": "west_end", "description": "A dusty dead end.", "start": true,
     "exits": {"east": "hall"}},
    {"id": "hall", "description": "A narrow hall.",
     "exits": {"east": "east_end", "west": "west_end"}},
    {"id": "east_end", "description": "Daylight ahead.", "goal": true,
     "exits": {"west": "hall"}}
  ],
  "entities": [
    {"name": "coin", "kind": "item", "location": "west_end", "portable": true}
  ]
})";

const char* kCorridorRole = R"({
  "role": "courier",
  "triple_reward": 6,
  "goal_bonus": 5,
  "triples": [
    {"subject": "you", "relation": "have", "object": "coin"}
  ]
})";

ExpertArch tiny_arch() {
  ExpertArch a;
  a.token_embed = 4;
  a.gru_hidden = 5;
  a.state_dim = 6;
  a.tmpl_embed = 3;
  a.obj_embed = 3;
  a.kg_proj = 4;
  a.critic_hidden = 4;
  return a;
}

void randomize_params(Expert& e, uint64_t seed) {
  Rng root(seed);
  for (auto* p : e.params()) {
    Rng stream = root.split(p->name);
    for (auto& v : p->value.values) v = stream.uniform(-0.6f, 0.6f);
  }
}

Expert make_expert(const std::string& role, const GameSpec& spec, const Tokenizer& tok,
                   const KgIndex& kgi, uint64_t init_seed, uint64_t param_seed,
                   bool frozen) {
  Expert e(role, spec, tok.n_tokens(), kgi.bits(), tiny_arch(), Rng(init_seed));
  if (param_seed != 0) randomize_params(e, param_seed);
  if (frozen) e.freeze();
  return e;
}

MoeConfig tiny_cfg() {
  MoeConfig cfg;
  cfg.state_bottleneck = 3;
  cfg.dist_bottleneck = 3;
  return cfg;
}

struct MoeRebuild {
  std::vector<guild::agent::StepRefs> refs;
  std::vector<refmoe::MoeScriptStep> script;
  std::vector<double> returns, advantages;
  std::vector<float> v_hot;
  std::vector<Action> actions;
  float a2c = 0.0f, flatsum = 0.0f, loss = 0.0f;
  bool truncated = false;
  float score = 0.0f;
};

// Transcription of the ensemble's episode loop against free-standing parts,
// recording everything the double-precision oracle needs. Stream consumption
// must line up draw for draw with the real implementation; the bit-equality
// checks against Ensemble::train_episode below keep the two in lockstep.
MoeRebuild run_rebuild(Tape& tape, Expert& hot, std::vector<Expert>& frozen,
                       AttentionModule& act_attn, AttentionModule& obj_attn,
                       const GameSpec& spec, const RoleSpec& role, const Tokenizer& tok,
                       const KgIndex& kgi, const MoeConfig& cfg, Rng rng, int64_t budget,
                       bool do_backward) {
  MoeRebuild out;
  tape.clear();
  WorldState state = guild::tw::reset(spec);
  RewardTracker tracker(spec, role);
  tracker.reset(state);
  ValueRef hidden = hot.initial_hidden(tape);
  const int n_frozen = int(frozen.size());
  std::vector<Expert::Raw> raws;
  for (auto& e : frozen) raws.push_back(e.make_raw());
  std::vector<int> own_tmpl(size_t(n_frozen), -1);
  std::vector<float> frozen_value(size_t(n_frozen), 0.0f);
  std::vector<float> kg_vec;
  ValueRef flat_acc{};
  int64_t env_steps = 0;

  while (!state.done) {
    if (budget <= 0) {
      out.truncated = true;
      break;
    }
    const std::vector<int>& tokens = tok.encode(render(observe(state, spec)));
    kgi.encode_into(tracker.kg(), kg_vec);
    std::vector<int> tmpl_adm = admissible_templates(state, spec);
    std::vector<uint8_t> tmpl_mask = guild::agent::to_mask(tmpl_adm, spec.n_templates());

    refmoe::MoeScriptStep ss;
    ss.tokens = tokens;
    ss.kg = kg_vec;
    ss.tmpl_mask = tmpl_mask;

    std::vector<ValueRef> tmpl_seeds;
    for (int j = 0; j < n_frozen; ++j) {
      Expert::Raw& raw = raws[size_t(j)];
      frozen[size_t(j)].raw_encode(raw, tokens, kg_vec);
      frozen[size_t(j)].raw_template(raw, tmpl_mask);
      own_tmpl[size_t(j)] = rng.sample_weighted(raw.tmpl_probs);
      frozen_value[size_t(j)] = frozen[size_t(j)].raw_value(raw);
      std::vector<float> seeded =
          guild::moe::value_seed(raw.tmpl_probs, frozen_value[size_t(j)], cfg.v_floor);
      ss.frozen_tmpl_seeds.emplace_back(seeded.begin(), seeded.end());
      tmpl_seeds.push_back(tape.constant_vec(std::move(seeded)));
    }

    Expert::Encoded enc = hot.encode(tape, tokens, kg_vec, hidden);
    hidden = enc.hidden;
    ValueRef hot_tl = hot.template_logits(tape, enc.o);
    ValueRef hot_tp = tape.masked_softmax(hot_tl, tmpl_mask);
    ValueRef v_hot = hot.value(tape, enc.o);
    ValueRef hot_tmpl_seed = guild::moe::value_seed(tape, hot_tp, v_hot, cfg.v_floor);
    rng.sample_weighted(tape.val(hot_tp).values);
    out.v_hot.push_back(tape.scalar_val(v_hot));

    std::vector<ValueRef> act_seeds = tmpl_seeds;
    if (!cfg.attend_frozen_only) act_seeds.push_back(hot_tmpl_seed);
    ValueRef act_alpha = act_attn.attend(tape, enc.o, act_seeds);
    ValueRef l_act = guild::moe::mix(tape, act_alpha, act_seeds, hot_tmpl_seed);
    ValueRef act_p = tape.masked_softmax(l_act, tmpl_mask);
    ValueRef act_lp = tape.masked_log_softmax(l_act, tmpl_mask);

    float eps = cfg.epsilon.at(env_steps);
    bool explore = rng.uniform() < eps;
    int tmpl = explore ? tmpl_adm[size_t(rng.uniform_int(int(tmpl_adm.size())))]
                       : guild::agent::argmax_tiebreak_low(tape.val(act_p).values);
    ss.tmpl = tmpl;

    guild::agent::StepRefs rec;
    rec.logp = tape.pick(act_lp, tmpl);
    rec.entropy = tape.scale(tape.dot(act_p, act_lp), -1.0f);
    rec.value = v_hot;

    Action action{tmpl, {}};
    const int slots = spec.templates[size_t(tmpl)].slots;
    std::vector<ValueRef> obj_lps;
    std::vector<std::vector<uint8_t>> obj_masks;
    if (slots > 0) {
      ValueRef obj_entropy{};
      int prev = -1;
      for (int slot = 0; slot < slots; ++slot) {
        std::vector<int> oadm = admissible_objects(state, spec, tmpl, slot);
        std::vector<uint8_t> omask = guild::agent::to_mask(oadm, spec.n_vocab());
        refmoe::SlotScript sl;
        sl.mask = omask;

        std::vector<ValueRef> obj_seeds;
        for (int j = 0; j < n_frozen; ++j) {
          Expert::Raw& raw = raws[size_t(j)];
          frozen[size_t(j)].raw_object(raw, own_tmpl[size_t(j)], prev, omask);
          std::vector<float> seeded =
              guild::moe::value_seed(raw.obj_probs, frozen_value[size_t(j)], cfg.v_floor);
          sl.frozen_seeds.emplace_back(seeded.begin(), seeded.end());
          obj_seeds.push_back(tape.constant_vec(std::move(seeded)));
        }
        ValueRef hot_ol = hot.object_logits(tape, enc.o, tmpl, prev);
        ValueRef hot_op = tape.masked_softmax(hot_ol, omask);
        ValueRef hot_obj_seed = guild::moe::value_seed(tape, hot_op, v_hot, cfg.v_floor);
        if (!cfg.attend_frozen_only) obj_seeds.push_back(hot_obj_seed);

        ValueRef obj_alpha = obj_attn.attend(tape, enc.o, obj_seeds);
        ValueRef l_obj = guild::moe::mix(tape, obj_alpha, obj_seeds, hot_obj_seed);
        ValueRef op = tape.masked_softmax(l_obj, omask);
        ValueRef olp = tape.masked_log_softmax(l_obj, omask);

        int obj = explore ? oadm[size_t(rng.uniform_int(int(oadm.size())))]
                          : guild::agent::argmax_tiebreak_low(tape.val(op).values);
        sl.obj = obj;
        rec.logp = tape.add(rec.logp, tape.pick(olp, obj));
        ValueRef h = tape.scale(tape.dot(op, olp), -1.0f);
        obj_entropy = slot == 0 ? h : tape.add(obj_entropy, h);
        obj_lps.push_back(olp);
        obj_masks.push_back(omask);
        ss.slots.push_back(std::move(sl));
        action.objects.push_back(obj);
        prev = obj;
      }
      rec.entropy = tape.add(rec.entropy, tape.scale(obj_entropy, 1.0f / float(slots)));
    }

    ValueRef flat = guild::moe::flatten_step(tape, act_lp, tmpl_mask, obj_lps, obj_masks);
    flat_acc = out.refs.empty() ? flat : tape.add(flat_acc, flat);

    step(state, spec, action);
    rec.reward = tracker.on_step(state);
    ss.reward = rec.reward;
    out.refs.push_back(rec);
    out.script.push_back(std::move(ss));
    out.actions.push_back(action);
    budget -= 1;
    env_steps += 1;
  }

  out.score = tracker.score();
  if (out.refs.empty()) return out;

  ValueRef a2c = guild::agent::a2c_loss(tape, out.refs, cfg.gamma, cfg.value_coef,
                                        cfg.entropy_coef, out.truncated);
  ValueRef total = tape.add(a2c, tape.scale(flat_acc, cfg.flatten_coef));
  out.a2c = tape.scalar_val(a2c);
  out.flatsum = tape.scalar_val(flat_acc);
  out.loss = tape.scalar_val(total);

  float g = out.truncated ? tape.scalar_val(out.refs.back().value) : 0.0f;
  out.returns.resize(out.refs.size());
  out.advantages.resize(out.refs.size());
  for (int t = int(out.refs.size()) - 1; t >= 0; --t) {
    g = out.refs[size_t(t)].reward + cfg.gamma * g;
    out.returns[size_t(t)] = double(g);
    out.advantages[size_t(t)] = double(g - tape.scalar_val(out.refs[size_t(t)].value));
  }
  if (do_backward) tape.backward(total);
  return out;
}

// Composite graphs pile float32 roundoff onto coordinates whose true
// derivative is zero or near it; a pure ratio degenerates to noise over noise
// there. Two-sided criterion: a coordinate passes on either the relative or
// the absolute margin. Returns the worst violation factor (<= 1 passes).
double fd_violation(const std::function<double(std::span<const double>)>& f,
                    std::span<const float> x, std::span<const float> analytic,
                    double rtol, double atol, double h = 1e-5) {
  REQUIRE(x.size() == analytic.size());
  std::vector<double> point(x.begin(), x.end());
  double worst = 0.0;
  for (size_t i = 0; i < point.size(); ++i) {
    double keep = point[i];
    point[i] = keep + h;
    double hi = f(point);
    point[i] = keep - h;
    double lo = f(point);
    point[i] = keep;
    REQUIRE(std::isfinite(hi));
    REQUIRE(std::isfinite(lo));
    double numeric = (hi - lo) / (2.0 * h);
    double a = double(analytic[i]);
    double tol = atol + rtol * std::max(std::abs(a), std::abs(numeric));
    worst = std::max(worst, std::abs(a - numeric) / tol);
  }
  return worst;
}

float flatten_of(Tape& tape, const std::vector<float>& tmpl_logits,
                 const std::vector<uint8_t>& tmask,
                 const std::vector<std::pair<std::vector<float>, std::vector<uint8_t>>>&
                     slots) {
  tape.clear();
  ValueRef tlp = tape.masked_log_softmax(tape.constant_vec(tmpl_logits), tmask);
  std::vector<ValueRef> olps;
  std::vector<std::vector<uint8_t>> omasks;
  for (const auto& [lg, mk] : slots) {
    olps.push_back(tape.masked_log_softmax(tape.constant_vec(lg), mk));
    omasks.push_back(mk);
  }
  return tape.scalar_val(guild::moe::flatten_step(tape, tlp, tmask, olps, omasks));
}

}  // namespace

TEST_CASE("exploration rate decays linearly to zero") {
  EpsilonSchedule s;
  CHECK(s.at(0) == 1.0f);
  CHECK(s.at(5000) == doctest::Approx(0.5f));
  CHECK(s.at(9999) > 0.0f);
  CHECK(s.at(10000) == 0.0f);
  CHECK(s.at(10001) == 0.0f);
  CHECK(s.at(1000000) == 0.0f);
  float prev = 2.0f;
  for (int64_t t = 0; t <= 12000; t += 250) {
    float e = s.at(t);
    CHECK(e <= prev);
    CHECK(e >= 0.0f);
    prev = e;
  }
  EpsilonSchedule half{0.5f, 100};
  CHECK(half.at(50) == doctest::Approx(0.25f));
  CHECK(half.at(100) == 0.0f);
}

TEST_CASE("value seeding scales distributions without moving the argmax") {
  std::vector<float> probs = {0.1f, 0.5f, 0.25f, 0.15f};

  auto same = guild::moe::value_seed(probs, 1.0f, 0.05f);
  for (size_t i = 0; i < probs.size(); ++i) CHECK(same[i] == probs[i]);

  auto floored = guild::moe::value_seed(probs, -3.0f, 0.05f);
  for (size_t i = 0; i < probs.size(); ++i)
    CHECK(floored[i] == doctest::Approx(0.05f * probs[i]));

  Rng rng(21);
  for (int it = 0; it < 100; ++it) {
    int n = 2 + rng.uniform_int(8);
    std::vector<float> p(static_cast<size_t>(n));
    float total = 0.0f;
    for (auto& v : p) {
      v = rng.uniform() + 1e-3f;
      total += v;
    }
    for (auto& v : p) v /= total;
    float value = rng.uniform(-2.0f, 2.0f);
    auto seeded = guild::moe::value_seed(p, value, 0.05f);
    CHECK(guild::agent::argmax_tiebreak_low(seeded) ==
          guild::agent::argmax_tiebreak_low(p));
    for (float v : seeded) CHECK(v >= 0.0f);
  }

  Tape tape;
  ValueRef pv = tape.constant_vec(probs);
  ValueRef v = tape.scalar(-3.0f);
  const auto& out = tape.val(guild::moe::value_seed(tape, pv, v, 0.05f));
  auto want = guild::moe::value_seed(probs, -3.0f, 0.05f);
  for (size_t i = 0; i < probs.size(); ++i) CHECK(out.values[i] == want[i]);

  auto sd = guild::moe::make_seeded(2, probs, 0.8f, 0.05f);
  CHECK(sd.expert == 2);
  CHECK(sd.value == 0.8f);
  CHECK(sd.probs == probs);
  for (size_t i = 0; i < probs.size(); ++i)
    CHECK(sd.seeded[i] == doctest::Approx(0.8f * probs[i]));
}

TEST_CASE("attention weights form a distribution and ignore nothing") {
  Tape tape;
  Rng rng(11);
  AttentionModule mod("act", 6, 5, 3, 3, rng.split("mod"));

  std::vector<float> state(6);
  for (auto& v : state) v = rng.uniform(-1.0f, 1.0f);

  SUBCASE("identical proposals share the weight evenly") {
    std::vector<float> seed(5);
    for (auto& v : seed) v = rng.uniform(0.0f, 1.0f);
    std::vector<ValueRef> seeds;
    for (int j = 0; j < 4; ++j) seeds.push_back(tape.constant_vec(seed));
    const auto& alpha = tape.val(mod.attend(tape, tape.constant_vec(state), seeds));
    REQUIRE(alpha.size() == 4);
    for (int j = 0; j < 4; ++j) CHECK(alpha.values[size_t(j)] == doctest::Approx(0.25f).epsilon(1e-6));
  }

  SUBCASE("a single proposal takes all of it") {
    std::vector<ValueRef> seeds = {tape.constant_vec({0.2f, 0.3f, 0.1f, 0.15f, 0.25f})};
    const auto& alpha = tape.val(mod.attend(tape, tape.constant_vec(state), seeds));
    REQUIRE(alpha.size() == 1);
    CHECK(alpha.values[0] == 1.0f);
  }

  SUBCASE("random proposals: nonnegative, sums to one") {
    for (int it = 0; it < 50; ++it) {
      tape.clear();
      int n = 1 + rng.uniform_int(6);
      std::vector<ValueRef> seeds;
      for (int j = 0; j < n; ++j) {
        std::vector<float> s(5);
        for (auto& v : s) v = rng.uniform(0.0f, 2.0f);
        seeds.push_back(tape.constant_vec(s));
      }
      std::vector<float> st(6);
      for (auto& v : st) v = rng.uniform(-2.0f, 2.0f);
      const auto& alpha = tape.val(mod.attend(tape, tape.constant_vec(st), seeds));
      float total = 0.0f;
      for (float a : alpha.values) {
        CHECK(a >= 0.0f);
        total += a;
      }
      CHECK(total == doctest::Approx(1.0f).epsilon(1e-6));
    }
  }

  SUBCASE("width mismatches are rejected") {
    std::vector<ValueRef> bad = {tape.constant_vec({0.5f, 0.5f})};
    CHECK_THROWS_AS(mod.attend(tape, tape.constant_vec(state), bad), ConfigError);
    std::vector<ValueRef> ok = {tape.constant_vec({0.2f, 0.2f, 0.2f, 0.2f, 0.2f})};
    CHECK_THROWS_AS(mod.attend(tape, tape.constant_vec({1.0f, 2.0f}), ok), ConfigError);
  }
}

TEST_CASE("attention gradients match finite differences") {
  Tape tape;
  Rng rng(29);
  AttentionModule mod("act", 6, 5, 3, 3, rng.split("mod"));

  std::vector<float> state(6);
  for (auto& v : state) v = rng.uniform(-1.0f, 1.0f);
  std::vector<std::vector<float>> seeds_f(3, std::vector<float>(5));
  for (auto& s : seeds_f)
    for (auto& v : s) v = rng.uniform(0.0f, 1.0f);
  std::vector<float> w = {0.7f, -1.3f, 0.4f};

  std::vector<ValueRef> seeds;
  for (const auto& s : seeds_f) seeds.push_back(tape.constant_vec(s));
  ValueRef alpha = mod.attend(tape, tape.constant_vec(state), seeds);
  ValueRef loss = tape.dot(alpha, tape.constant_vec(w));
  tape.backward(loss);

  refmoe::ParamSet base;
  for (const auto* p : mod.params()) base.add(p);
  refm::dvec dstate(state.begin(), state.end());
  std::vector<refm::dvec> dseeds;
  for (const auto& s : seeds_f) dseeds.emplace_back(s.begin(), s.end());

  auto objective = [&](const refmoe::ParamSet& ps) {
    refm::dvec a = refmoe::attend(ps, "act", dstate, dseeds);
    double out = 0.0;
    for (size_t j = 0; j < a.size(); ++j) out += a[j] * double(w[j]);
    return out;
  };

  for (auto* p : mod.params()) {
    auto f = [&](std::span<const double> sub) {
      refmoe::ParamSet ps = base;
      ps.flat.at(p->name) = refm::dvec(sub.begin(), sub.end());
      return objective(ps);
    };
    double v = fd_violation(f, p->value.values, p->grad.values, 1e-4, 1e-6);
    CAPTURE(p->name);
    CHECK(v <= 1.0);
  }

  // The distribution tower's shared shift moves every score by the same
  // amount, and the weights are invariant to that: zero derivative exactly.
  {
    refmoe::ParamSet shifted = base;
    for (double& v : shifted.flat.at("act.dist_bias")) v += 0.05;
    CHECK(std::abs(objective(shifted) - objective(base)) <= 1e-9);
  }
}

TEST_CASE("blending follows the averaged attention sum") {
  Tape tape;

  SUBCASE("one-hot weights with a silent trainable proposal") {
    std::vector<ValueRef> seeds = {tape.constant_vec({0.1f, 0.2f, 0.3f}),
                                   tape.constant_vec({0.5f, 0.25f, 0.25f}),
                                   tape.constant_vec({0.9f, 0.05f, 0.05f})};
    ValueRef alpha = tape.constant_vec({0.0f, 1.0f, 0.0f});
    ValueRef hot = tape.constant_vec({0.0f, 0.0f, 0.0f});
    const auto& l = tape.val(guild::moe::mix(tape, alpha, seeds, hot));
    CHECK(l.values[0] == 0.25f);
    CHECK(l.values[1] == 0.125f);
    CHECK(l.values[2] == 0.125f);
  }

  SUBCASE("all-equal proposals are a fixed point") {
    std::vector<float> s = {0.4f, 0.35f, 0.25f};
    std::vector<ValueRef> seeds = {tape.constant_vec(s), tape.constant_vec(s),
                                   tape.constant_vec(s)};
    ValueRef alpha = tape.constant_vec({0.2f, 0.5f, 0.3f});
    const auto& l = tape.val(guild::moe::mix(tape, alpha, seeds, tape.constant_vec(s)));
    for (size_t i = 0; i < s.size(); ++i)
      CHECK(l.values[i] == doctest::Approx(s[i]).epsilon(1e-6));
  }

  SUBCASE("tape blend agrees with a direct evaluation") {
    Rng rng(31);
    for (int it = 0; it < 25; ++it) {
      tape.clear();
      int n = 1 + rng.uniform_int(5);
      int dim = 2 + rng.uniform_int(6);
      std::vector<std::vector<float>> seeds_f(static_cast<size_t>(n),
                                              std::vector<float>(static_cast<size_t>(dim)));
      for (auto& s : seeds_f)
        for (auto& v : s) v = rng.uniform(0.0f, 2.0f);
      std::vector<float> hot(static_cast<size_t>(dim));
      for (auto& v : hot) v = rng.uniform(0.0f, 2.0f);
      std::vector<float> alpha(static_cast<size_t>(n));
      float total = 0.0f;
      for (auto& a : alpha) {
        a = rng.uniform() + 1e-3f;
        total += a;
      }
      for (auto& a : alpha) a /= total;

      std::vector<ValueRef> seeds;
      for (const auto& s : seeds_f) seeds.push_back(tape.constant_vec(s));
      const auto& l = tape.val(guild::moe::mix(tape, tape.constant_vec(alpha), seeds,
                                               tape.constant_vec(hot)));
      for (int i = 0; i < dim; ++i) {
        double direct = double(hot[size_t(i)]);
        for (int j = 0; j < n; ++j)
          direct += double(alpha[size_t(j)]) * double(seeds_f[size_t(j)][size_t(i)]);
        direct *= 0.5;
        CHECK(std::abs(double(l.values[size_t(i)]) - direct) <= 1e-6);
      }
    }
  }

  SUBCASE("weight count must match the proposal count") {
    std::vector<ValueRef> seeds = {tape.constant_vec({0.5f, 0.5f})};
    ValueRef alpha = tape.constant_vec({0.6f, 0.4f});
    CHECK_THROWS_AS(guild::moe::mix(tape, alpha, seeds, tape.constant_vec({0.1f, 0.9f})),
                    ContractError);
  }
}

TEST_CASE("spread regularizer closed forms and minimizer") {
  Tape tape;

  SUBCASE("uniform over five templates, no objects") {
    std::vector<float> logits(5, 0.0f);
    std::vector<uint8_t> mask(5, 1);
    float got = flatten_of(tape, logits, mask, {});
    CHECK(got == doctest::Approx(1.0 + std::log(5.0)).epsilon(1e-6));
  }

  SUBCASE("masked-out entries do not contribute") {
    std::vector<float> logits = {0.0f, 7.0f, 0.0f, -3.0f, 0.0f, 0.0f, 11.0f};
    std::vector<uint8_t> mask = {1, 0, 1, 0, 1, 1, 0};
    std::vector<float> uniform4(7, 0.0f);
    CHECK(flatten_of(tape, logits, mask, {}) ==
          doctest::Approx(flatten_of(tape, uniform4, mask, {})).epsilon(1e-6));
  }

  SUBCASE("template and object terms add up") {
    std::vector<float> tl(2, 0.0f);
    std::vector<uint8_t> tm(2, 1);
    std::vector<float> ol(3, 0.0f);
    std::vector<uint8_t> om(3, 1);
    float got = flatten_of(tape, tl, tm, {{ol, om}});
    CHECK(got == doctest::Approx((1.0 + std::log(2.0)) + (1.0 + std::log(3.0))).epsilon(1e-6));
    float two_slots = flatten_of(tape, tl, tm, {{ol, om}, {ol, om}});
    CHECK(two_slots == doctest::Approx(got).epsilon(1e-6));
  }

  SUBCASE("single valid template contributes a constant with zero gradient") {
    tape.clear();
    guild::nn::ParamTensor logits("probe", guild::nn::Tensor::vec({0.3f, -1.0f, 2.0f}));
    std::vector<uint8_t> mask = {0, 1, 0};
    ValueRef lp = tape.masked_log_softmax(tape.param(logits), mask);
    ValueRef term = guild::moe::flatten_step(tape, lp, mask, {}, {});
    CHECK(tape.scalar_val(term) == 1.0f);
    tape.backward(term);
    for (float g : logits.grad.values) CHECK(g == 0.0f);
  }

  SUBCASE("uniform strictly minimizes over random masked distributions") {
    Rng rng(47);
    for (int K : {2, 5, 10}) {
      for (int M : {2, 5, 10}) {
        std::vector<uint8_t> tmask(12, 0);
        std::vector<uint8_t> omask(12, 0);
        for (int i = 0; i < K; ++i) tmask[size_t(2 * i)] = 1;
        for (int i = 0; i < M; ++i) omask[size_t(i)] = 1;
        std::vector<float> zeros(12, 0.0f);
        float best = flatten_of(tape, zeros, tmask, {{zeros, omask}});
        for (int it = 0; it < 200; ++it) {
          std::vector<float> tl(12), ol(12);
          for (auto& v : tl) v = rng.uniform(-4.0f, 4.0f);
          for (auto& v : ol) v = rng.uniform(-4.0f, 4.0f);
          CHECK(flatten_of(tape, tl, tmask, {{ol, omask}}) > best);
        }
      }
    }
  }
}

TEST_CASE("ensemble construction validates its parts") {
  GameSpec spec = guild::tw::parse_spec(kCorridorSpec, "corridor");
  RoleSpec role = guild::story::parse_role(kCorridorRole, "corridor", spec);
  Tokenizer tok(spec);
  KgIndex kgi(spec);

  auto frozen_pair = [&] {
    std::vector<Expert> v;
    v.push_back(make_expert("a", spec, tok, kgi, 1, 100, true));
    v.push_back(make_expert("b", spec, tok, kgi, 2, 200, true));
    return v;
  };

  SUBCASE("well-formed") {
    Ensemble ens(frozen_pair(), make_expert("hot", spec, tok, kgi, 3, 0, false), spec, role,
                 tok, kgi, tiny_cfg(), Rng(5));
    CHECK(ens.n_experts() == 3);
    CHECK(ens.env_steps() == 0);
  }

  SUBCASE("frozen list may not be empty") {
    CHECK_THROWS_AS(Ensemble({}, make_expert("hot", spec, tok, kgi, 3, 0, false), spec,
                             role, tok, kgi, tiny_cfg(), Rng(5)),
                    ConfigError);
  }

  SUBCASE("a thawed expert cannot pose as frozen") {
    std::vector<Expert> bad;
    bad.push_back(make_expert("a", spec, tok, kgi, 1, 100, false));
    CHECK_THROWS_AS(Ensemble(std::move(bad), make_expert("hot", spec, tok, kgi, 3, 0, false),
                             spec, role, tok, kgi, tiny_cfg(), Rng(5)),
                    ContractError);
  }

  SUBCASE("the trainable expert must not be frozen") {
    CHECK_THROWS_AS(Ensemble(frozen_pair(), make_expert("hot", spec, tok, kgi, 3, 0, true),
                             spec, role, tok, kgi, tiny_cfg(), Rng(5)),
                    ContractError);
  }

  SUBCASE("input widths must agree") {
    GameSpec other = guild::tw::parse_spec(kGradSpec, "grad");
    Tokenizer tok2(other);
    KgIndex kgi2(other);
    std::vector<Expert> bad;
    bad.push_back(make_expert("a", other, tok2, kgi2, 1, 100, true));
    CHECK_THROWS_AS(Ensemble(std::move(bad), make_expert("hot", spec, tok, kgi, 3, 0, false),
                             spec, role, tok, kgi, tiny_cfg(), Rng(5)),
                    ConfigError);
  }
}

TEST_CASE("episode loss decomposes into actor-critic and spread parts") {
  GameSpec spec = guild::tw::parse_spec(kCorridorSpec, "corridor");
  RoleSpec role = guild::story::parse_role(kCorridorRole, "corridor", spec);
  Tokenizer tok(spec);
  KgIndex kgi(spec);

  MoeConfig cfg = tiny_cfg();
  cfg.epsilon = {1.0f, 1000000};

  auto build_frozen = [&] {
    std::vector<Expert> v;
    v.push_back(make_expert("a", spec, tok, kgi, 1, 100, true));
    v.push_back(make_expert("b", spec, tok, kgi, 2, 200, true));
    return v;
  };
  auto build_hot = [&] {
    Expert e = make_expert("hot", spec, tok, kgi, 3, 300, false);
    return e;
  };

  MoeConfig zero = cfg;
  zero.flatten_coef = 0.0f;

  Ensemble full(build_frozen(), build_hot(), spec, role, tok, kgi, cfg, Rng(5));
  Ensemble plain(build_frozen(), build_hot(), spec, role, tok, kgi, zero, Rng(5));

  int64_t b1 = 4, b2 = 4;
  EpisodeStats full_stats = full.train_episode(Rng(777), b1);
  EpisodeStats plain_stats = plain.train_episode(Rng(777), b2);
  REQUIRE(full_stats.steps >= 1);
  REQUIRE(plain_stats.steps == full_stats.steps);

  Tape tape;
  std::vector<Expert> frozen = build_frozen();
  Expert hot = build_hot();
  Rng init(5);
  AttentionModule act("act", hot.arch().state_dim, spec.n_templates(), cfg.state_bottleneck,
                      cfg.dist_bottleneck, init.split("act"));
  AttentionModule obj("obj", hot.arch().state_dim, spec.n_vocab(), cfg.state_bottleneck,
                      cfg.dist_bottleneck, init.split("obj"));
  MoeRebuild rb =
      run_rebuild(tape, hot, frozen, act, obj, spec, role, tok, kgi, cfg, Rng(777), 4, false);

  REQUIRE(int(rb.refs.size()) == full_stats.steps);
  CHECK(rb.loss == full_stats.loss);
  CHECK(rb.a2c == plain_stats.loss);
  CHECK(rb.score == full_stats.score);
  CHECK(rb.loss ==
        doctest::Approx(rb.a2c + cfg.flatten_coef * rb.flatsum).epsilon(1e-5));
}

TEST_CASE("blended update gradients match finite differences on a toy trajectory") {
  GameSpec spec = guild::tw::parse_spec(kGradSpec, "grad");
  RoleSpec role = guild::story::parse_role(kGradRole, "grad", spec);
  Tokenizer tok(spec);
  KgIndex kgi(spec);

  MoeConfig cfg = tiny_cfg();
  cfg.epsilon = {1.0f, 1000000};

  std::vector<Expert> frozen;
  frozen.push_back(make_expert("a", spec, tok, kgi, 1, 100, true));
  frozen.push_back(make_expert("b", spec, tok, kgi, 2, 200, true));
  Expert hot = make_expert("hot", spec, tok, kgi, 3, 300, false);
  Rng init(5);
  AttentionModule act("act", hot.arch().state_dim, spec.n_templates(), cfg.state_bottleneck,
                      cfg.dist_bottleneck, init.split("act"));
  AttentionModule obj("obj", hot.arch().state_dim, spec.n_vocab(), cfg.state_bottleneck,
                      cfg.dist_bottleneck, init.split("obj"));

  // Pick a stream whose two uniform draws land on a multi-slot action with the
  // critic value a safe distance from the clamp corner.
  Tape tape;
  uint64_t seed = 0;
  for (uint64_t s = 1; s <= 300 && seed == 0; ++s) {
    MoeRebuild probe = run_rebuild(tape, hot, frozen, act, obj, spec, role, tok, kgi, cfg,
                                   Rng(9000 + s), 2, false);
    if (int(probe.refs.size()) != 2) continue;
    bool multi = false;
    for (const auto& a : probe.actions) multi = multi || a.objects.size() >= 2;
    bool safe = true;
    for (float v : probe.v_hot) safe = safe && std::abs(v - cfg.v_floor) > 1e-3f;
    if (multi && safe && probe.truncated) seed = 9000 + s;
  }
  REQUIRE(seed != 0);

  // The rebuilt loop must be the same computation the ensemble runs.
  {
    std::vector<Expert> ens_frozen = frozen;
    Expert ens_hot = hot;
    Ensemble ens(std::move(ens_frozen), std::move(ens_hot), spec, role, tok, kgi, cfg,
                 Rng(5));
    int64_t budget = 2;
    EpisodeStats stats = ens.train_episode(Rng(seed), budget);
    REQUIRE(stats.steps == 2);
    MoeRebuild check = run_rebuild(tape, hot, frozen, act, obj, spec, role, tok, kgi, cfg,
                                   Rng(seed), 2, false);
    CHECK(check.loss == stats.loss);
  }

  for (auto* p : hot.params()) p->zero_grad();
  MoeRebuild rb =
      run_rebuild(tape, hot, frozen, act, obj, spec, role, tok, kgi, cfg, Rng(seed), 2, true);
  REQUIRE(rb.truncated);

  refmoe::ParamSet base = refmoe::collect_params(hot, act, obj);
  auto loss_fn = [&](const std::string& name, std::span<const double> sub) {
    return refmoe::update_loss(base, name, sub, hot.arch(), rb.script, rb.advantages,
                               rb.returns, double(cfg.value_coef), double(cfg.entropy_coef),
                               double(cfg.flatten_coef), double(cfg.v_floor),
                               cfg.attend_frozen_only);
  };
  CHECK(std::abs(loss_fn("", {}) - double(rb.loss)) <= 1e-3);

  std::vector<guild::nn::ParamTensor*> all = hot.params();
  for (auto* p : act.params()) all.push_back(p);
  for (auto* p : obj.params()) all.push_back(p);
  for (auto* p : all) {
    auto f = [&](std::span<const double> sub) { return loss_fn(p->name, sub); };
    double v = fd_violation(f, p->value.values, p->grad.values, 1e-4, 1e-6);
    CAPTURE(p->name);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("updates never touch the frozen experts") {
  GameSpec spec = guild::tw::parse_spec(kCorridorSpec, "corridor");
  RoleSpec role = guild::story::parse_role(kCorridorRole, "corridor", spec);
  Tokenizer tok(spec);
  KgIndex kgi(spec);

  std::vector<Expert> frozen;
  frozen.push_back(make_expert("a", spec, tok, kgi, 1, 100, true));
  frozen.push_back(make_expert("b", spec, tok, kgi, 2, 200, true));
  std::vector<uint64_t> before;
  for (const auto& e : frozen) before.push_back(e.param_hash());

  Ensemble ens(std::move(frozen), make_expert("hot", spec, tok, kgi, 3, 0, false), spec,
               role, tok, kgi, tiny_cfg(), Rng(5));
  uint64_t frozen_before = ens.frozen_hash();
  uint64_t trainable_before = ens.trainable_hash();

  Rng root(99);
  int64_t spent = 0;
  for (int ep = 0; ep < 30; ++ep) {
    int64_t budget = 40;
    EpisodeStats st = ens.train_episode(root.split(uint64_t(ep)), budget);
    spent += st.steps;
    CHECK(std::isfinite(st.loss));
  }
  CHECK(ens.env_steps() == spent);
  CHECK(ens.updates_run() == 30);
  CHECK(ens.frozen_hash() == frozen_before);
  CHECK(ens.trainable_hash() != trainable_before);
  for (int j = 0; j < 2; ++j) {
    CHECK(ens.frozen(j).param_hash() == before[size_t(j)]);
    for (const auto* p : ens.frozen(j).params())
      for (float g : p->grad.values) CHECK(g == 0.0f);
  }
}

TEST_CASE("attention weights stay a distribution through live play") {
  GameSpec spec = guild::tw::parse_spec(kCorridorSpec, "corridor");
  RoleSpec role = guild::story::parse_role(kCorridorRole, "corridor", spec);
  Tokenizer tok(spec);
  KgIndex kgi(spec);

  auto check_traces = [](const std::vector<StepTrace>& traces, size_t want) {
    REQUIRE(!traces.empty());
    for (const StepTrace& t : traces) {
      REQUIRE(t.act_alpha.size() == want);
      float total = 0.0f;
      for (float a : t.act_alpha) {
        CHECK(a >= 0.0f);
        total += a;
      }
      CHECK(total == doctest::Approx(1.0f).epsilon(1e-6));
      for (const auto& oa : t.obj_alpha) {
        REQUIRE(oa.size() == want);
        float os = 0.0f;
        for (float a : oa) {
          CHECK(a >= 0.0f);
          os += a;
        }
        CHECK(os == doctest::Approx(1.0f).epsilon(1e-6));
      }
    }
  };

  SUBCASE("everyone is attended by default, twins agree") {
    std::vector<Expert> frozen;
    frozen.push_back(make_expert("twin", spec, tok, kgi, 1, 100, true));
    frozen.push_back(make_expert("twin", spec, tok, kgi, 1, 100, true));
    frozen.push_back(make_expert("c", spec, tok, kgi, 2, 200, true));
    Ensemble ens(std::move(frozen), make_expert("hot", spec, tok, kgi, 3, 0, false), spec,
                 role, tok, kgi, tiny_cfg(), Rng(5));
    int64_t budget = 30;
    ens.train_episode(Rng(41), budget);
    check_traces(ens.last_trace(), 4);
    for (const StepTrace& t : ens.last_trace()) {
      CHECK(t.act_alpha[0] == t.act_alpha[1]);
      CHECK(t.expert_top[0] == t.expert_top[1]);
    }
  }

  SUBCASE("frozen-only attention drops the trainable proposal from the weights") {
    MoeConfig cfg = tiny_cfg();
    cfg.attend_frozen_only = true;
    std::vector<Expert> frozen;
    frozen.push_back(make_expert("a", spec, tok, kgi, 1, 100, true));
    frozen.push_back(make_expert("b", spec, tok, kgi, 2, 200, true));
    Ensemble ens(std::move(frozen), make_expert("hot", spec, tok, kgi, 3, 0, false), spec,
                 role, tok, kgi, cfg, Rng(5));
    int64_t budget = 30;
    EpisodeStats st = ens.train_episode(Rng(43), budget);
    CHECK(std::isfinite(st.loss));
    check_traces(ens.last_trace(), 2);
  }
}

TEST_CASE("greedy play is reproducible and leaves no fingerprints") {
  GameSpec spec = guild::tw::parse_spec(kCorridorSpec, "corridor");
  RoleSpec role = guild::story::parse_role(kCorridorRole, "corridor", spec);
  Tokenizer tok(spec);
  KgIndex kgi(spec);

  auto build = [&] {
    std::vector<Expert> frozen;
    frozen.push_back(make_expert("a", spec, tok, kgi, 1, 100, true));
    frozen.push_back(make_expert("b", spec, tok, kgi, 2, 200, true));
    return std::make_unique<Ensemble>(std::move(frozen),
                                      make_expert("hot", spec, tok, kgi, 3, 300, false),
                                      spec, role, tok, kgi, tiny_cfg(), Rng(5));
  };

  auto a = build();
  uint64_t hash_before = a->trainable_hash();
  EpisodeStats first = a->eval_episode(Rng(1234));
  std::vector<int> chosen_first;
  for (const StepTrace& t : a->last_trace()) chosen_first.push_back(t.chosen_tmpl);

  EpisodeStats second = a->eval_episode(Rng(1234));
  std::vector<int> chosen_second;
  for (const StepTrace& t : a->last_trace()) chosen_second.push_back(t.chosen_tmpl);

  CHECK(first.score == second.score);
  CHECK(first.steps == second.steps);
  CHECK(chosen_first == chosen_second);
  CHECK(a->trainable_hash() == hash_before);
  CHECK(a->env_steps() == 0);
  CHECK(a->updates_run() == 0);

  auto b = build();
  EpisodeStats third = b->eval_episode(Rng(1234));
  std::vector<int> chosen_third;
  for (const StepTrace& t : b->last_trace()) chosen_third.push_back(t.chosen_tmpl);
  CHECK(third.score == first.score);
  CHECK(third.steps == first.steps);
  CHECK(chosen_third == chosen_first);

  for (const StepTrace& t : b->last_trace()) {
    CHECK(t.epsilon == 0.0f);
    CHECK_FALSE(t.explored);
  }
}

TEST_CASE("full exploration chooses templates uniformly") {
  GameSpec spec = guild::tw::parse_spec(kCorridorSpec, "corridor");
  RoleSpec role = guild::story::parse_role(kCorridorRole, "corridor", spec);
  Tokenizer tok(spec);
  KgIndex kgi(spec);

  WorldState start = guild::tw::reset(spec);
  std::vector<int> adm = admissible_templates(start, spec);
  REQUIRE(adm.size() >= 2);

  MoeConfig cfg = tiny_cfg();
  cfg.epsilon = {1.0f, 1000000000};
  std::vector<Expert> frozen;
  frozen.push_back(make_expert("a", spec, tok, kgi, 1, 100, true));
  Ensemble ens(std::move(frozen), make_expert("hot", spec, tok, kgi, 3, 0, false), spec,
               role, tok, kgi, cfg, Rng(5));

  std::vector<int> counts(size_t(spec.n_templates()), 0);
  Rng root(4242);
  const int kDraws = 10000;
  for (int i = 0; i < kDraws; ++i) {
    int64_t budget = 1;
    EpisodeStats st = ens.train_episode(root.split(uint64_t(i)), budget);
    REQUIRE(st.steps == 1);
    REQUIRE(std::isfinite(st.loss));
    counts[size_t(ens.last_trace()[0].chosen_tmpl)] += 1;
  }

  int covered = 0;
  for (int t = 0; t < spec.n_templates(); ++t) covered += counts[size_t(t)];
  CHECK(covered == kDraws);
  const float want = 1.0f / float(adm.size());
  for (int t : adm) {
    float freq = float(counts[size_t(t)]) / float(kDraws);
    CHECK(std::abs(freq - want) <= 0.02f);
  }
  for (int t = 0; t < spec.n_templates(); ++t) {
    bool admissible = false;
    for (int x : adm) admissible = admissible || x == t;
    if (!admissible) CHECK(counts[size_t(t)] == 0);
  }
}

TEST_CASE("with exploration on, no expert is starved of agreement") {
  GameSpec spec = guild::tw::parse_spec(kCorridorSpec, "corridor");
  RoleSpec role = guild::story::parse_role(kCorridorRole, "corridor", spec);
  Tokenizer tok(spec);
  KgIndex kgi(spec);

  MoeConfig cfg = tiny_cfg();
  cfg.epsilon = {1.0f, 2000};
  std::vector<Expert> frozen;
  frozen.push_back(make_expert("a", spec, tok, kgi, 1, 100, true));
  frozen.push_back(make_expert("b", spec, tok, kgi, 2, 200, true));
  frozen.push_back(make_expert("c", spec, tok, kgi, 4, 400, true));
  Ensemble ens(std::move(frozen), make_expert("hot", spec, tok, kgi, 3, 300, false), spec,
               role, tok, kgi, cfg, Rng(5));

  std::vector<int> agreements(4, 0);
  Rng root(7);
  int64_t budget = 1000;
  uint64_t episode = 0;
  while (budget > 0) {
    ens.train_episode(root.split(episode++), budget);
    for (const StepTrace& t : ens.last_trace())
      for (size_t j = 0; j < t.expert_top.size(); ++j)
        if (t.expert_top[j] == t.chosen_tmpl) agreements[j] += 1;
  }
  CHECK(ens.env_steps() == 1000);
  for (size_t j = 0; j < agreements.size(); ++j) {
    CAPTURE(j);
    CHECK(agreements[j] > 0);
  }
}

TEST_CASE("trainable checkpoint round-trips and refuses strangers") {
  GameSpec spec = guild::tw::parse_spec(kCorridorSpec, "corridor");
  RoleSpec role = guild::story::parse_role(kCorridorRole, "corridor", spec);
  Tokenizer tok(spec);
  KgIndex kgi(spec);

  auto build = [&](int n_frozen) {
    std::vector<Expert> frozen;
    for (int j = 0; j < n_frozen; ++j)
      frozen.push_back(make_expert("f" + std::to_string(j), spec, tok, kgi, uint64_t(j + 1),
                                   uint64_t(100 * (j + 1)), true));
    return std::make_unique<Ensemble>(std::move(frozen),
                                      make_expert("hot", spec, tok, kgi, 3, 0, false), spec,
                                      role, tok, kgi, tiny_cfg(), Rng(5));
  };

  const std::string path = "moe_trainable.ckpt";

  auto a = build(2);
  Rng root(13);
  for (int ep = 0; ep < 5; ++ep) {
    int64_t budget = 30;
    a->train_episode(root.split(uint64_t(ep)), budget);
  }
  a->save_trainable(path, 777);
  uint64_t want = a->trainable_hash();

  auto b = build(2);
  CHECK(b->trainable_hash() != want);
  b->restore_trainable(path);
  CHECK(b->trainable_hash() == want);

  EpisodeStats ea = a->eval_episode(Rng(55));
  EpisodeStats eb = b->eval_episode(Rng(55));
  CHECK(ea.score == eb.score);
  CHECK(ea.steps == eb.steps);

  auto c = build(3);
  CHECK_THROWS_AS(c->restore_trainable(path), ConfigError);

  GameSpec other = guild::tw::parse_spec(kGradSpec, "grad");
  RoleSpec orole = guild::story::parse_role(kGradRole, "grad", other);
  Tokenizer otok(other);
  KgIndex okgi(other);
  std::vector<Expert> ofrozen;
  ofrozen.push_back(make_expert("a", other, otok, okgi, 1, 100, true));
  Ensemble d(std::move(ofrozen), make_expert("hot", other, otok, okgi, 3, 0, false), other,
             orole, otok, okgi, tiny_cfg(), Rng(5));
  CHECK_THROWS_AS(d.restore_trainable(path), ConfigError);

  std::remove(path.c_str());
}

TEST_CASE("exploration dies out at the horizon") {
  GameSpec spec = guild::tw::parse_spec(kCorridorSpec, "corridor");
  RoleSpec role = guild::story::parse_role(kCorridorRole, "corridor", spec);
  Tokenizer tok(spec);
  KgIndex kgi(spec);

  MoeConfig cfg = tiny_cfg();
  cfg.epsilon = {1.0f, 50};
  std::vector<Expert> frozen;
  frozen.push_back(make_expert("a", spec, tok, kgi, 1, 100, true));
  Ensemble ens(std::move(frozen), make_expert("hot", spec, tok, kgi, 3, 0, false), spec,
               role, tok, kgi, cfg, Rng(5));

  Rng root(3);
  uint64_t episode = 0;
  while (ens.env_steps() < 60) {
    int64_t budget = 10;
    ens.train_episode(root.split(episode++), budget);
  }
  CHECK(ens.current_epsilon() == 0.0f);

  int64_t budget = 10;
  ens.train_episode(root.split(episode++), budget);
  for (const StepTrace& t : ens.last_trace()) {
    CHECK(t.epsilon == 0.0f);
    CHECK_FALSE(t.explored);
  }
}
