#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "guild/nn/rng.hpp"
#include "guild/nn/tape.hpp"
#include "guild/nn/tensor.hpp"
#include "guild/tw/game_spec.hpp"

namespace guild::agent {

struct ExpertArch {
  int token_embed = 32;
  int gru_hidden = 64;
  int state_dim = 64;   // width of the state embedding every head reads
  int tmpl_embed = 16;
  int obj_embed = 16;
  int kg_proj = 32;
  int critic_hidden = 32;
};

// One role policy: recurrent text encoder + fact-vector projection feeding a
// template head, a per-slot object head and a critic. Exposes two forward
// paths over the same kernels: a tape path that supports backprop and an
// allocation-free raw path for frozen or evaluation-only use; both produce
// bit-identical values.
class Expert {
 public:
  Expert(std::string role, const tw::GameSpec& spec, int n_tokens, int kg_bits,
         const ExpertArch& arch, nn::Rng rng);

  const std::string& role() const { return role_; }
  const ExpertArch& arch() const { return arch_; }
  int n_tokens() const { return n_tokens_; }
  int kg_bits() const { return kg_bits_; }
  int n_templates() const { return n_templates_; }
  int n_vocab() const { return n_vocab_; }

  bool frozen() const { return frozen_; }
  void freeze();
  void thaw();

  std::vector<nn::ParamTensor*> params();
  std::vector<const nn::ParamTensor*> params() const;
  uint64_t param_hash() const;

  struct Encoded {
    nn::ValueRef o;
    nn::ValueRef hidden;
  };
  nn::ValueRef initial_hidden(nn::Tape& tape) const;
  Encoded encode(nn::Tape& tape, const std::vector<int>& tokens,
                 const std::vector<float>& kg, nn::ValueRef hidden);
  nn::ValueRef template_logits(nn::Tape& tape, nn::ValueRef o);
  // prev_obj < 0 means first slot (no earlier object to condition on).
  nn::ValueRef object_logits(nn::Tape& tape, nn::ValueRef o, int tmpl, int prev_obj);
  nn::ValueRef value(nn::Tape& tape, nn::ValueRef o);

  struct Raw {
    std::vector<float> hidden, h2, scratch, x, kgp, cat, pre, o;
    std::vector<float> tmpl_logits, tmpl_probs;
    std::vector<float> obj_cat, obj_logits, obj_probs;
    std::vector<float> critic_h, critic_pre;
    float value = 0.0f;
  };
  Raw make_raw() const;
  void raw_reset(Raw& w) const;  // zero the recurrent state
  void raw_encode(Raw& w, const std::vector<int>& tokens, const std::vector<float>& kg) const;
  void raw_template(Raw& w, const std::vector<uint8_t>& mask) const;
  void raw_object(Raw& w, int tmpl, int prev_obj, const std::vector<uint8_t>& mask) const;
  float raw_value(Raw& w) const;

  void save(const std::string& path, uint64_t config_hash) const;
  static Expert load(const std::string& path, const tw::GameSpec& spec, int n_tokens,
                     int kg_bits);

 private:
  Expert() = default;
  void shape(const tw::GameSpec& spec, int n_tokens, int kg_bits, const ExpertArch& arch);

  std::string role_;
  ExpertArch arch_;
  int n_tokens_ = 0, kg_bits_ = 0, n_templates_ = 0, n_vocab_ = 0;
  uint64_t spec_hash_ = 0;
  bool frozen_ = false;

  nn::ParamTensor tok_embed_, gru_wih_, gru_bih_, gru_whh_, gru_bhh_;
  nn::ParamTensor kg_w_, kg_b_, mix_w_, mix_b_;
  nn::ParamTensor tmpl_w_, tmpl_b_, tmpl_embed_;
  nn::ParamTensor obj_embed_, obj_w_, obj_b_;
  nn::ParamTensor critic_w1_, critic_b1_, critic_w2_, critic_b2_;
};

}  // namespace guild::agent
