#include "guild/moe/attention.hpp"

#include "guild/errors.hpp"
#include "guild/nn/optim.hpp"

namespace guild::moe {

using nn::ParamTensor;
using nn::Tape;
using nn::Tensor;
using nn::ValueRef;

float EpsilonSchedule::at(int64_t step) const {
  if (horizon <= 0 || step >= horizon) return 0.0f;
  if (step <= 0) return initial;
  return initial * float(1.0 - double(step) / double(horizon));
}

ValueRef value_seed(Tape& tape, ValueRef probs, ValueRef v, float v_floor) {
  return tape.mul_scalar(probs, tape.clamp_min(v, v_floor));
}

std::vector<float> value_seed(std::vector<float> probs, float v, float v_floor) {
  const float s = v < v_floor ? v_floor : v;
  for (float& p : probs) p *= s;
  return probs;
}

AttentionModule::AttentionModule(const std::string& name, int state_dim, int dist_dim,
                                 int state_bottleneck, int dist_bottleneck, nn::Rng rng)
    : state_dim_(state_dim),
      dist_dim_(dist_dim),
      state_bneck_(state_bottleneck),
      dist_bneck_(dist_bottleneck) {
  if (state_dim <= 0 || dist_dim <= 0 || state_bottleneck <= 0 || dist_bottleneck <= 0)
    throw ConfigError("attention module " + name + ": dimensions must be positive");

  std::vector<float> ones(size_t(state_dim), 1.0f);
  obs_down_ = ParamTensor(name + ".obs_down", Tensor::zeros({state_bottleneck, state_dim}));
  obs_up_ = ParamTensor(name + ".obs_up", Tensor::zeros({state_dim, state_bottleneck}));
  obs_gain_ = ParamTensor(name + ".obs_gain", Tensor::vec(ones));
  obs_bias_ = ParamTensor(name + ".obs_bias", Tensor::zeros({state_dim}));
  dist_down_ = ParamTensor(name + ".dist_down", Tensor::zeros({dist_bottleneck, dist_dim}));
  dist_up_ = ParamTensor(name + ".dist_up", Tensor::zeros({state_dim, dist_bottleneck}));
  dist_gain_ = ParamTensor(name + ".dist_gain", Tensor::vec(ones));
  dist_bias_ = ParamTensor(name + ".dist_bias", Tensor::zeros({state_dim}));

  auto fan = [&](ParamTensor& p, int fan_in) {
    nn::Rng stream = rng.split(p.name);
    nn::init_fan_in(p, fan_in, stream);
  };
  fan(obs_down_, state_dim);
  fan(obs_up_, state_bottleneck);
  fan(dist_down_, dist_dim);
  fan(dist_up_, dist_bottleneck);
}

std::vector<ParamTensor*> AttentionModule::params() {
  return {&obs_down_, &obs_up_, &obs_gain_, &obs_bias_,
          &dist_down_, &dist_up_, &dist_gain_, &dist_bias_};
}

std::vector<const ParamTensor*> AttentionModule::params() const {
  auto mut = const_cast<AttentionModule*>(this)->params();
  return std::vector<const ParamTensor*>(mut.begin(), mut.end());
}

ValueRef AttentionModule::attend(Tape& tape, ValueRef state,
                                 std::span<const ValueRef> seeded) {
  if (seeded.empty()) throw ContractError("attend: empty proposal list");
  if (int(tape.val(state).size()) != state_dim_)
    throw ConfigError("attend: state width does not match the module");

  ValueRef ht = tape.layer_norm(
      tape.matvec(tape.param(obs_up_), tape.silu(tape.matvec(tape.param(obs_down_), state))),
      tape.param(obs_gain_), tape.param(obs_bias_));

  ValueRef dd = tape.param(dist_down_), du = tape.param(dist_up_);
  ValueRef dg = tape.param(dist_gain_), db = tape.param(dist_bias_);
  std::vector<ValueRef> scores;
  scores.reserve(seeded.size());
  for (ValueRef s : seeded) {
    if (int(tape.val(s).size()) != dist_dim_)
      throw ConfigError("attend: proposal width does not match the module");
    ValueRef hj = tape.layer_norm(tape.matvec(du, tape.silu(tape.matvec(dd, s))), dg, db);
    scores.push_back(tape.dot(hj, ht));
  }
  std::vector<uint8_t> all(scores.size(), 1);
  return tape.masked_softmax(tape.pack(scores), all);
}

ValueRef mix(Tape& tape, ValueRef alpha, std::span<const ValueRef> seeded, ValueRef hot) {
  if (seeded.empty()) throw ContractError("mix: empty proposal list");
  if (int(tape.val(alpha).size()) != int(seeded.size()))
    throw ContractError("mix: one weight per proposal required");
  ValueRef acc = hot;
  for (size_t j = 0; j < seeded.size(); ++j)
    acc = tape.add(acc, tape.mul_scalar(seeded[j], tape.pick(alpha, int(j))));
  return tape.scale(acc, 0.5f);
}

namespace {
// 1 - (mean log-probability over the valid set); uniform is the minimizer.
ValueRef spread_term(Tape& tape, ValueRef logp, const std::vector<uint8_t>& mask) {
  int k = 0;
  std::vector<float> picks(mask.size(), 0.0f);
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      picks[i] = 1.0f;
      ++k;
    }
  if (k == 0) throw ContractError("flatten_step: empty valid set");
  ValueRef s = tape.dot(tape.constant_vec(std::move(picks)), logp);
  return tape.offset(tape.scale(s, -1.0f / float(k)), 1.0f);
}
}  // namespace

ValueRef flatten_step(Tape& tape, ValueRef tmpl_logp, const std::vector<uint8_t>& tmpl_mask,
                      std::span<const nn::ValueRef> obj_logps,
                      std::span<const std::vector<uint8_t>> obj_masks) {
  if (obj_logps.size() != obj_masks.size())
    throw ContractError("flatten_step: one mask per object distribution required");
  ValueRef total = spread_term(tape, tmpl_logp, tmpl_mask);
  if (obj_logps.empty()) return total;
  ValueRef obj{};
  for (size_t p = 0; p < obj_logps.size(); ++p) {
    ValueRef t = spread_term(tape, obj_logps[p], obj_masks[p]);
    obj = p == 0 ? t : tape.add(obj, t);
  }
  return tape.add(total, tape.scale(obj, 1.0f / float(obj_logps.size())));
}

}  // namespace guild::moe
