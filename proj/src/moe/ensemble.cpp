#include "guild/moe/ensemble.hpp"

#include "guild/errors.hpp"
#include "guild/nn/checkpoint.hpp"

namespace guild::moe {

using agent::EpisodeStats;
using agent::Expert;
using agent::StepRefs;
using nn::ParamTensor;
using nn::ValueRef;

SeededDistribution make_seeded(int expert, std::vector<float> probs, float value,
                               float v_floor) {
  SeededDistribution sd;
  sd.expert = expert;
  sd.value = value;
  sd.seeded = value_seed(probs, value, v_floor);
  sd.probs = std::move(probs);
  return sd;
}

MixResult attend_and_mix(nn::Tape& tape, AttentionModule& module, ValueRef state,
                         std::span<const ValueRef> seeded, ValueRef hot) {
  MixResult r;
  r.alpha = module.attend(tape, state, seeded);
  r.logits = mix(tape, r.alpha, seeded, hot);
  return r;
}

Ensemble::Ensemble(std::vector<Expert> frozen, Expert hot, const tw::GameSpec& spec,
                   const story::RoleSpec& role, const agent::Tokenizer& tokenizer,
                   const agent::KgIndex& kg_index, MoeConfig cfg, nn::Rng init_rng)
    : frozen_(std::move(frozen)),
      hot_(std::move(hot)),
      spec_(&spec),
      role_(&role),
      tokenizer_(&tokenizer),
      kg_index_(&kg_index),
      cfg_(cfg),
      act_attn_("act", hot_.arch().state_dim, spec.n_templates(), cfg.state_bottleneck,
                cfg.dist_bottleneck, init_rng.split("act")),
      obj_attn_("obj", hot_.arch().state_dim, spec.n_vocab(), cfg.state_bottleneck,
                cfg.dist_bottleneck, init_rng.split("obj")),
      opt_(trainable_params(), cfg.adam) {
  if (frozen_.empty()) throw ConfigError("ensemble: at least one frozen expert required");
  if (hot_.frozen()) throw ContractError("ensemble: the trainable expert is frozen");
  if (hot_.n_templates() != spec_->n_templates() || hot_.n_vocab() != spec_->n_vocab())
    throw ConfigError("ensemble: trainable expert does not match the game spec");
  for (const Expert& e : frozen_) {
    if (!e.frozen())
      throw ContractError("ensemble: expert " + e.role() + " must be frozen");
    if (e.n_tokens() != hot_.n_tokens() || e.kg_bits() != hot_.kg_bits() ||
        e.n_templates() != hot_.n_templates() || e.n_vocab() != hot_.n_vocab())
      throw ConfigError("ensemble: expert " + e.role() +
                        " was built for different input widths");
  }
  raws_.reserve(frozen_.size());
  for (const Expert& e : frozen_) raws_.push_back(e.make_raw());
}

std::vector<ParamTensor*> Ensemble::trainable_params() {
  std::vector<ParamTensor*> out = hot_.params();
  for (ParamTensor* p : act_attn_.params()) out.push_back(p);
  for (ParamTensor* p : obj_attn_.params()) out.push_back(p);
  return out;
}

EpisodeStats Ensemble::train_episode(nn::Rng episode_rng, int64_t& budget) {
  return run_episode(episode_rng, &budget);
}

EpisodeStats Ensemble::eval_episode(nn::Rng episode_rng) {
  return run_episode(episode_rng, nullptr);
}

EpisodeStats Ensemble::run_episode(nn::Rng& rng, int64_t* budget) {
  const bool training = budget != nullptr;
  EpisodeStats stats;
  if (training && *budget <= 0) return stats;

  tape_.clear();
  trace_.clear();
  tw::WorldState state = tw::reset(*spec_);
  story::RewardTracker tracker(*spec_, *role_);
  tracker.reset(state);
  ValueRef hot_hidden = hot_.initial_hidden(tape_);
  const int n_frozen = int(frozen_.size());
  for (int j = 0; j < n_frozen; ++j) frozen_[size_t(j)].raw_reset(raws_[size_t(j)]);

  std::vector<StepRefs> steps;
  ValueRef flatsum{};
  std::vector<float> kg_vec;
  std::vector<int> own_tmpl(size_t(n_frozen), -1);
  std::vector<float> frozen_value(size_t(n_frozen), 0.0f);
  bool truncated = false;

  while (!state.done) {
    if (training && *budget <= 0) {
      truncated = true;
      break;
    }
    const std::vector<int>& tokens = tokenizer_->encode(render(observe(state, *spec_)));
    kg_index_->encode_into(tracker.kg(), kg_vec);

    std::vector<int> tmpl_adm = admissible_templates(state, *spec_);
    if (tmpl_adm.empty()) throw ContractError("ensemble episode: no admissible template");
    std::vector<uint8_t> tmpl_mask = agent::to_mask(tmpl_adm, spec_->n_templates());

    StepTrace trace;
    trace.expert_top.resize(size_t(n_frozen) + 1, -1);

    // Frozen proposals ride the gradient-free path and enter the tape as
    // constants. Each expert keeps its own recurrent state, votes for a
    // template of its own, and reports one critic value that scales both of
    // its proposals this step.
    std::vector<ValueRef> tmpl_seeds;
    tmpl_seeds.reserve(size_t(n_frozen) + 1);
    for (int j = 0; j < n_frozen; ++j) {
      Expert::Raw& raw = raws_[size_t(j)];
      frozen_[size_t(j)].raw_encode(raw, tokens, kg_vec);
      frozen_[size_t(j)].raw_template(raw, tmpl_mask);
      own_tmpl[size_t(j)] = rng.sample_weighted(raw.tmpl_probs);
      frozen_value[size_t(j)] = frozen_[size_t(j)].raw_value(raw);
      trace.expert_top[size_t(j)] = agent::argmax_tiebreak_low(raw.tmpl_probs);
      tmpl_seeds.push_back(tape_.constant_vec(
          value_seed(raw.tmpl_probs, frozen_value[size_t(j)], cfg_.v_floor)));
    }

    Expert::Encoded enc = hot_.encode(tape_, tokens, kg_vec, hot_hidden);
    hot_hidden = enc.hidden;
    ValueRef hot_tl = hot_.template_logits(tape_, enc.o);
    ValueRef hot_tp = tape_.masked_softmax(hot_tl, tmpl_mask);
    ValueRef v_hot = hot_.value(tape_, enc.o);
    ValueRef hot_tmpl_seed = value_seed(tape_, hot_tp, v_hot, cfg_.v_floor);
    // The trainable expert casts its own vote like everyone else, keeping the
    // stream layout uniform; the blended choice below supersedes it.
    rng.sample_weighted(tape_.val(hot_tp).values);
    trace.expert_top[size_t(n_frozen)] =
        agent::argmax_tiebreak_low(tape_.val(hot_tp).values);

    std::vector<ValueRef> act_seeds = tmpl_seeds;
    if (!cfg_.attend_frozen_only) act_seeds.push_back(hot_tmpl_seed);
    MixResult act = attend_and_mix(tape_, act_attn_, enc.o, act_seeds, hot_tmpl_seed);
    ValueRef act_p = tape_.masked_softmax(act.logits, tmpl_mask);
    ValueRef act_lp = tape_.masked_log_softmax(act.logits, tmpl_mask);
    trace.act_alpha = tape_.val(act.alpha).values;

    trace.epsilon = training ? cfg_.epsilon.at(env_steps_) : 0.0f;
    const bool explore = training && rng.uniform() < trace.epsilon;
    trace.explored = explore;

    int tmpl = explore ? tmpl_adm[size_t(rng.uniform_int(int(tmpl_adm.size())))]
                       : agent::argmax_tiebreak_low(tape_.val(act_p).values);
    trace.chosen_tmpl = tmpl;

    StepRefs rec;
    rec.logp = tape_.pick(act_lp, tmpl);
    rec.entropy = tape_.scale(tape_.dot(act_p, act_lp), -1.0f);
    rec.value = v_hot;

    tw::Action action{tmpl, {}};
    const int slots = spec_->templates[size_t(tmpl)].slots;
    std::vector<ValueRef> obj_lps;
    std::vector<std::vector<uint8_t>> obj_masks;
    if (slots > 0) {
      ValueRef obj_entropy{};
      int prev = -1;
      for (int slot = 0; slot < slots; ++slot) {
        std::vector<int> oadm = admissible_objects(state, *spec_, tmpl, slot);
        std::vector<uint8_t> omask = agent::to_mask(oadm, spec_->n_vocab());

        // Frozen object proposals stay conditioned on each expert's own
        // template vote but are masked by the chosen template's slot, the
        // only valid set the blended choice can be drawn from.
        std::vector<ValueRef> obj_seeds;
        obj_seeds.reserve(size_t(n_frozen) + 1);
        for (int j = 0; j < n_frozen; ++j) {
          Expert::Raw& raw = raws_[size_t(j)];
          frozen_[size_t(j)].raw_object(raw, own_tmpl[size_t(j)], prev, omask);
          obj_seeds.push_back(tape_.constant_vec(
              value_seed(raw.obj_probs, frozen_value[size_t(j)], cfg_.v_floor)));
        }
        ValueRef hot_ol = hot_.object_logits(tape_, enc.o, tmpl, prev);
        ValueRef hot_op = tape_.masked_softmax(hot_ol, omask);
        ValueRef hot_obj_seed = value_seed(tape_, hot_op, v_hot, cfg_.v_floor);
        if (!cfg_.attend_frozen_only) obj_seeds.push_back(hot_obj_seed);

        MixResult ob = attend_and_mix(tape_, obj_attn_, enc.o, obj_seeds, hot_obj_seed);
        ValueRef op = tape_.masked_softmax(ob.logits, omask);
        ValueRef olp = tape_.masked_log_softmax(ob.logits, omask);
        trace.obj_alpha.push_back(tape_.val(ob.alpha).values);

        int obj = explore ? oadm[size_t(rng.uniform_int(int(oadm.size())))]
                          : agent::argmax_tiebreak_low(tape_.val(op).values);
        rec.logp = tape_.add(rec.logp, tape_.pick(olp, obj));
        ValueRef h = tape_.scale(tape_.dot(op, olp), -1.0f);
        obj_entropy = slot == 0 ? h : tape_.add(obj_entropy, h);
        obj_lps.push_back(olp);
        obj_masks.push_back(omask);
        action.objects.push_back(obj);
        prev = obj;
      }
      rec.entropy = tape_.add(rec.entropy, tape_.scale(obj_entropy, 1.0f / float(slots)));
    }

    ValueRef flat = flatten_step(tape_, act_lp, tmpl_mask, obj_lps, obj_masks);
    flatsum = steps.empty() ? flat : tape_.add(flatsum, flat);

    step(state, *spec_, action);
    rec.reward = tracker.on_step(state);
    steps.push_back(rec);
    trace_.push_back(std::move(trace));
    stats.steps += 1;
    if (training) {
      *budget -= 1;
      env_steps_ += 1;
    }
  }

  stats.score = tracker.score();
  stats.reached_goal = state.room == spec_->goal_room;
  if (!training || steps.empty()) return stats;

  ValueRef a2c = agent::a2c_loss(tape_, steps, cfg_.gamma, cfg_.value_coef,
                                 cfg_.entropy_coef, truncated);
  ValueRef total = tape_.add(a2c, tape_.scale(flatsum, cfg_.flatten_coef));
  stats.loss = tape_.scalar_val(total);
  tape_.backward(total);
  stats.grad_norm = opt_.step();
  opt_.zero_grad();
  updates_ += 1;
  return stats;
}

uint64_t Ensemble::frozen_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const Expert& e : frozen_) {
    uint64_t ph = e.param_hash();
    h = nn::fnv1a(std::string_view(reinterpret_cast<const char*>(&ph), sizeof(ph)), h);
  }
  return h;
}

uint64_t Ensemble::trainable_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const ParamTensor* p : const_cast<Ensemble*>(this)->trainable_params()) {
    h = nn::fnv1a(p->name, h);
    h = nn::fnv1a(std::string_view(reinterpret_cast<const char*>(p->value.values.data()),
                                   p->value.values.size() * sizeof(float)),
                  h);
  }
  return h;
}

void Ensemble::save_trainable(const std::string& path, uint64_t config_hash) const {
  nn::CheckpointMeta meta;
  meta.config_hash = config_hash;
  meta.spec_hash = spec_->hash;
  meta.role = role_->role;
  const agent::ExpertArch& a = hot_.arch();
  meta.dims = {{"token_embed", uint32_t(a.token_embed)},
               {"gru_hidden", uint32_t(a.gru_hidden)},
               {"state_dim", uint32_t(a.state_dim)},
               {"tmpl_embed", uint32_t(a.tmpl_embed)},
               {"obj_embed", uint32_t(a.obj_embed)},
               {"kg_proj", uint32_t(a.kg_proj)},
               {"critic_hidden", uint32_t(a.critic_hidden)},
               {"n_tokens", uint32_t(hot_.n_tokens())},
               {"kg_bits", uint32_t(hot_.kg_bits())},
               {"n_templates", uint32_t(hot_.n_templates())},
               {"n_vocab", uint32_t(hot_.n_vocab())},
               {"n_frozen", uint32_t(frozen_.size())},
               {"state_bottleneck", uint32_t(cfg_.state_bottleneck)},
               {"dist_bottleneck", uint32_t(cfg_.dist_bottleneck)}};
  auto mut = const_cast<Ensemble*>(this)->trainable_params();
  nn::save_checkpoint(path, meta, std::vector<const ParamTensor*>(mut.begin(), mut.end()));
}

void Ensemble::restore_trainable(const std::string& path) {
  nn::CheckpointMeta meta = nn::peek_checkpoint(path);
  if (meta.spec_hash != spec_->hash)
    throw ConfigError(path + ": checkpoint was trained on a different game spec");
  const agent::ExpertArch& a = hot_.arch();
  const bool match = int(meta.dim("token_embed")) == a.token_embed &&
                     int(meta.dim("gru_hidden")) == a.gru_hidden &&
                     int(meta.dim("state_dim")) == a.state_dim &&
                     int(meta.dim("tmpl_embed")) == a.tmpl_embed &&
                     int(meta.dim("obj_embed")) == a.obj_embed &&
                     int(meta.dim("kg_proj")) == a.kg_proj &&
                     int(meta.dim("critic_hidden")) == a.critic_hidden &&
                     int(meta.dim("n_tokens")) == hot_.n_tokens() &&
                     int(meta.dim("kg_bits")) == hot_.kg_bits() &&
                     int(meta.dim("n_templates")) == hot_.n_templates() &&
                     int(meta.dim("n_vocab")) == hot_.n_vocab() &&
                     int(meta.dim("n_frozen")) == int(frozen_.size()) &&
                     int(meta.dim("state_bottleneck")) == cfg_.state_bottleneck &&
                     int(meta.dim("dist_bottleneck")) == cfg_.dist_bottleneck;
  if (!match)
    throw ConfigError(path + ": checkpoint does not match this ensemble's shape");
  nn::load_checkpoint(path, trainable_params());
}

}  // namespace guild::moe
