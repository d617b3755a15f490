#include "guild/agent/train.hpp"

#include "guild/errors.hpp"

namespace guild::agent {

using nn::Tape;
using nn::ValueRef;

std::vector<uint8_t> to_mask(const std::vector<int>& indices, int n) {
  std::vector<uint8_t> mask(size_t(n), 0);
  for (int i : indices) mask[size_t(i)] = 1;
  return mask;
}

int argmax_tiebreak_low(const std::vector<float>& v) {
  int best = 0;
  for (int i = 1; i < int(v.size()); ++i)
    if (v[size_t(i)] > v[size_t(best)]) best = i;
  return best;
}

ValueRef a2c_loss(Tape& tape, const std::vector<StepRefs>& steps, float gamma,
                  float value_coef, float entropy_coef, bool truncated) {
  if (steps.empty()) throw ContractError("a2c_loss: empty trajectory");

  float g = truncated ? tape.scalar_val(steps.back().value) : 0.0f;
  std::vector<float> returns(steps.size());
  for (int t = int(steps.size()) - 1; t >= 0; --t) {
    g = steps[size_t(t)].reward + gamma * g;
    returns[size_t(t)] = g;
  }

  ValueRef policy{}, value{}, entropy{};
  for (size_t t = 0; t < steps.size(); ++t) {
    float adv = returns[t] - tape.scalar_val(steps[t].value);
    ValueRef p = tape.scale(steps[t].logp, -adv);
    ValueRef d = tape.sub(tape.scalar(returns[t]), steps[t].value);
    ValueRef v = tape.mul(d, d);
    policy = t == 0 ? p : tape.add(policy, p);
    value = t == 0 ? v : tape.add(value, v);
    entropy = t == 0 ? steps[t].entropy : tape.add(entropy, steps[t].entropy);
  }
  ValueRef loss = tape.add(policy, tape.scale(value, value_coef));
  return tape.add(loss, tape.scale(entropy, -entropy_coef));
}

ExpertTrainer::ExpertTrainer(Expert& expert, const tw::GameSpec& spec,
                             const story::RoleSpec& role, const Tokenizer& tokenizer,
                             const KgIndex& kg_index, TrainConfig cfg)
    : expert_(&expert),
      spec_(&spec),
      role_(&role),
      tokenizer_(&tokenizer),
      kg_index_(&kg_index),
      cfg_(cfg),
      opt_(expert.params(), cfg.adam) {}

EpisodeStats ExpertTrainer::train_episode(nn::Rng episode_rng, int64_t& budget) {
  if (expert_->frozen()) throw ContractError("train_episode: expert is frozen");
  EpisodeStats stats;
  if (budget <= 0) return stats;

  tape_.clear();
  tw::WorldState state = tw::reset(*spec_);
  story::RewardTracker tracker(*spec_, *role_);
  tracker.reset(state);
  ValueRef hidden = expert_->initial_hidden(tape_);
  std::vector<StepRefs> steps;
  std::vector<float> kg_vec;
  bool truncated = false;

  while (!state.done) {
    if (budget <= 0) {
      truncated = true;
      break;
    }
    const std::vector<int>& tokens = tokenizer_->encode(render(observe(state, *spec_)));
    kg_index_->encode_into(tracker.kg(), kg_vec);
    Expert::Encoded enc = expert_->encode(tape_, tokens, kg_vec, hidden);
    hidden = enc.hidden;

    std::vector<int> tmpl_adm = admissible_templates(state, *spec_);
    if (tmpl_adm.empty()) throw ContractError("train_episode: no admissible template");
    std::vector<uint8_t> tmpl_mask = to_mask(tmpl_adm, spec_->n_templates());
    ValueRef tl = expert_->template_logits(tape_, enc.o);
    ValueRef tp = tape_.masked_softmax(tl, tmpl_mask);
    ValueRef tlp = tape_.masked_log_softmax(tl, tmpl_mask);
    int tmpl = episode_rng.sample_weighted(tape_.val(tp).values);

    StepRefs rec;
    rec.logp = tape_.pick(tlp, tmpl);
    rec.entropy = tape_.scale(tape_.dot(tp, tlp), -1.0f);
    rec.value = expert_->value(tape_, enc.o);

    tw::Action action{tmpl, {}};
    int slots = spec_->templates[size_t(tmpl)].slots;
    if (slots > 0) {
      ValueRef obj_entropy{};
      int prev = -1;
      for (int slot = 0; slot < slots; ++slot) {
        std::vector<uint8_t> omask =
            to_mask(admissible_objects(state, *spec_, tmpl, slot), spec_->n_vocab());
        ValueRef ol = expert_->object_logits(tape_, enc.o, tmpl, prev);
        ValueRef op = tape_.masked_softmax(ol, omask);
        ValueRef olp = tape_.masked_log_softmax(ol, omask);
        int obj = episode_rng.sample_weighted(tape_.val(op).values);
        rec.logp = tape_.add(rec.logp, tape_.pick(olp, obj));
        ValueRef h = tape_.scale(tape_.dot(op, olp), -1.0f);
        obj_entropy = slot == 0 ? h : tape_.add(obj_entropy, h);
        action.objects.push_back(obj);
        prev = obj;
      }
      rec.entropy = tape_.add(rec.entropy, tape_.scale(obj_entropy, 1.0f / float(slots)));
    }

    step(state, *spec_, action);
    rec.reward = tracker.on_step(state);
    steps.push_back(rec);
    stats.steps += 1;
    budget -= 1;
  }

  stats.score = tracker.score();
  stats.reached_goal = state.room == spec_->goal_room;
  if (steps.empty()) return stats;

  ValueRef loss = a2c_loss(tape_, steps, cfg_.gamma, cfg_.value_coef, cfg_.entropy_coef,
                           truncated);
  stats.loss = tape_.scalar_val(loss);
  tape_.backward(loss);
  stats.grad_norm = opt_.step();
  opt_.zero_grad();
  episodes_ += 1;
  return stats;
}

EpisodeStats eval_expert_episode(const Expert& expert, const tw::GameSpec& spec,
                                 const story::RoleSpec& role, const Tokenizer& tokenizer,
                                 const KgIndex& kg_index, Expert::Raw& raw) {
  EpisodeStats stats;
  tw::WorldState state = tw::reset(spec);
  story::RewardTracker tracker(spec, role);
  tracker.reset(state);
  expert.raw_reset(raw);
  std::vector<float> kg_vec;

  while (!state.done) {
    const std::vector<int>& tokens = tokenizer.encode(render(observe(state, spec)));
    kg_index.encode_into(tracker.kg(), kg_vec);
    expert.raw_encode(raw, tokens, kg_vec);

    std::vector<uint8_t> tmpl_mask =
        to_mask(admissible_templates(state, spec), spec.n_templates());
    expert.raw_template(raw, tmpl_mask);
    int tmpl = argmax_tiebreak_low(raw.tmpl_probs);

    tw::Action action{tmpl, {}};
    int prev = -1;
    for (int slot = 0; slot < spec.templates[size_t(tmpl)].slots; ++slot) {
      std::vector<uint8_t> omask =
          to_mask(admissible_objects(state, spec, tmpl, slot), spec.n_vocab());
      expert.raw_object(raw, tmpl, prev, omask);
      int obj = argmax_tiebreak_low(raw.obj_probs);
      action.objects.push_back(obj);
      prev = obj;
    }
    step(state, spec, action);
    tracker.on_step(state);
    stats.steps += 1;
  }
  stats.score = tracker.score();
  stats.reached_goal = state.room == spec.goal_room;
  return stats;
}

}  // namespace guild::agent
