#include "guild/agent/expert.hpp"

#include <cstring>

#include "guild/errors.hpp"
#include "guild/nn/checkpoint.hpp"
#include "guild/nn/kernels.hpp"
#include "guild/nn/optim.hpp"

namespace guild::agent {

using nn::ParamTensor;
using nn::Tensor;
using nn::ValueRef;
namespace kern = nn::kern;

void Expert::shape(const tw::GameSpec& spec, int n_tokens, int kg_bits,
                   const ExpertArch& arch) {
  arch_ = arch;
  n_tokens_ = n_tokens;
  kg_bits_ = kg_bits;
  n_templates_ = spec.n_templates();
  n_vocab_ = spec.n_vocab();
  spec_hash_ = spec.hash;

  const int E = arch.token_embed, H = arch.gru_hidden, L = arch.state_dim;
  const int TE = arch.tmpl_embed, OE = arch.obj_embed, K = arch.kg_proj;
  const int CH = arch.critic_hidden;

  tok_embed_ = ParamTensor("tok_embed", Tensor::zeros({n_tokens_, E}));
  gru_wih_ = ParamTensor("gru.wih", Tensor::zeros({3 * H, E}));
  gru_bih_ = ParamTensor("gru.bih", Tensor::zeros({3 * H}));
  gru_whh_ = ParamTensor("gru.whh", Tensor::zeros({3 * H, H}));
  gru_bhh_ = ParamTensor("gru.bhh", Tensor::zeros({3 * H}));
  kg_w_ = ParamTensor("kg.w", Tensor::zeros({K, kg_bits_}));
  kg_b_ = ParamTensor("kg.b", Tensor::zeros({K}));
  mix_w_ = ParamTensor("mix.w", Tensor::zeros({L, H + K}));
  mix_b_ = ParamTensor("mix.b", Tensor::zeros({L}));
  tmpl_w_ = ParamTensor("tmpl.w", Tensor::zeros({n_templates_, L}));
  tmpl_b_ = ParamTensor("tmpl.b", Tensor::zeros({n_templates_}));
  tmpl_embed_ = ParamTensor("tmpl_embed", Tensor::zeros({n_templates_, TE}));
  obj_embed_ = ParamTensor("obj_embed", Tensor::zeros({n_vocab_, OE}));
  obj_w_ = ParamTensor("obj.w", Tensor::zeros({n_vocab_, L + TE + OE}));
  obj_b_ = ParamTensor("obj.b", Tensor::zeros({n_vocab_}));
  critic_w1_ = ParamTensor("critic.w1", Tensor::zeros({CH, L}));
  critic_b1_ = ParamTensor("critic.b1", Tensor::zeros({CH}));
  critic_w2_ = ParamTensor("critic.w2", Tensor::zeros({1, CH}));
  critic_b2_ = ParamTensor("critic.b2", Tensor::zeros({1}));
}

Expert::Expert(std::string role, const tw::GameSpec& spec, int n_tokens, int kg_bits,
               const ExpertArch& arch, nn::Rng rng) {
  role_ = std::move(role);
  shape(spec, n_tokens, kg_bits, arch);

  // Policy and critic output layers start at zero so the initial policy is
  // exactly uniform over admissible actions and the initial value is zero.
  auto fan = [&](ParamTensor& p, int fan_in) {
    nn::Rng stream = rng.split(p.name);
    nn::init_fan_in(p, fan_in, stream);
  };
  fan(tok_embed_, arch.token_embed);
  fan(gru_wih_, arch.token_embed);
  fan(gru_bih_, arch.gru_hidden);
  fan(gru_whh_, arch.gru_hidden);
  fan(gru_bhh_, arch.gru_hidden);
  fan(kg_w_, kg_bits_);
  fan(kg_b_, kg_bits_);
  fan(mix_w_, arch.gru_hidden + arch.kg_proj);
  fan(mix_b_, arch.gru_hidden + arch.kg_proj);
  fan(tmpl_embed_, arch.tmpl_embed);
  fan(obj_embed_, arch.obj_embed);
  fan(critic_w1_, arch.state_dim);
  fan(critic_b1_, arch.state_dim);
}

std::vector<ParamTensor*> Expert::params() {
  return {&tok_embed_, &gru_wih_,   &gru_bih_,  &gru_whh_,   &gru_bhh_,  &kg_w_,
          &kg_b_,      &mix_w_,     &mix_b_,    &tmpl_w_,    &tmpl_b_,   &tmpl_embed_,
          &obj_embed_, &obj_w_,     &obj_b_,    &critic_w1_, &critic_b1_, &critic_w2_,
          &critic_b2_};
}

std::vector<const ParamTensor*> Expert::params() const {
  auto mut = const_cast<Expert*>(this)->params();
  return std::vector<const ParamTensor*>(mut.begin(), mut.end());
}

void Expert::freeze() {
  frozen_ = true;
  for (ParamTensor* p : params()) {
    p->frozen = true;
    p->zero_grad();
  }
}

void Expert::thaw() {
  frozen_ = false;
  for (ParamTensor* p : params()) p->frozen = false;
}

uint64_t Expert::param_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const ParamTensor* p : params()) {
    h = nn::fnv1a(p->name, h);
    h = nn::fnv1a(std::string_view(reinterpret_cast<const char*>(p->value.values.data()),
                                   p->value.values.size() * sizeof(float)),
                  h);
  }
  return h;
}

ValueRef Expert::initial_hidden(nn::Tape& tape) const {
  return tape.constant(Tensor::zeros({arch_.gru_hidden}));
}

Expert::Encoded Expert::encode(nn::Tape& tape, const std::vector<int>& tokens,
                               const std::vector<float>& kg, ValueRef hidden) {
  if (int(kg.size()) != kg_bits_) throw ContractError("encode: fact vector width mismatch");
  kern::GruDims dims{arch_.token_embed, arch_.gru_hidden};
  ValueRef emb = tape.param(tok_embed_);
  ValueRef wih = tape.param(gru_wih_), bih = tape.param(gru_bih_);
  ValueRef whh = tape.param(gru_whh_), bhh = tape.param(gru_bhh_);
  for (int tok : tokens) {
    ValueRef x = tape.row(emb, tok);
    hidden = tape.gru_step(dims, wih, bih, whh, bhh, x, hidden);
  }
  ValueRef kgp = tape.linear(tape.param(kg_w_), tape.constant_vec(kg), tape.param(kg_b_));
  std::vector<ValueRef> parts = {hidden, kgp};
  ValueRef cat = tape.concat(parts);
  ValueRef o = tape.silu(tape.linear(tape.param(mix_w_), cat, tape.param(mix_b_)));
  return {o, hidden};
}

ValueRef Expert::template_logits(nn::Tape& tape, ValueRef o) {
  return tape.linear(tape.param(tmpl_w_), o, tape.param(tmpl_b_));
}

ValueRef Expert::object_logits(nn::Tape& tape, ValueRef o, int tmpl, int prev_obj) {
  ValueRef te = tape.row(tape.param(tmpl_embed_), tmpl);
  ValueRef oe = prev_obj >= 0 ? tape.row(tape.param(obj_embed_), prev_obj)
                              : tape.constant(Tensor::zeros({arch_.obj_embed}));
  std::vector<ValueRef> parts = {o, te, oe};
  ValueRef cat = tape.concat(parts);
  return tape.linear(tape.param(obj_w_), cat, tape.param(obj_b_));
}

ValueRef Expert::value(nn::Tape& tape, ValueRef o) {
  ValueRef h = tape.silu(tape.linear(tape.param(critic_w1_), o, tape.param(critic_b1_)));
  ValueRef v = tape.linear(tape.param(critic_w2_), h, tape.param(critic_b2_));
  return tape.pick(v, 0);
}

Expert::Raw Expert::make_raw() const {
  Raw w;
  w.hidden.assign(size_t(arch_.gru_hidden), 0.0f);
  w.h2.assign(size_t(arch_.gru_hidden), 0.0f);
  w.scratch.assign(size_t(4 * arch_.gru_hidden), 0.0f);
  w.x.assign(size_t(arch_.token_embed), 0.0f);
  w.kgp.assign(size_t(arch_.kg_proj), 0.0f);
  w.cat.assign(size_t(arch_.gru_hidden + arch_.kg_proj), 0.0f);
  w.pre.assign(size_t(arch_.state_dim), 0.0f);
  w.o.assign(size_t(arch_.state_dim), 0.0f);
  w.tmpl_logits.assign(size_t(n_templates_), 0.0f);
  w.tmpl_probs.assign(size_t(n_templates_), 0.0f);
  w.obj_cat.assign(size_t(arch_.state_dim + arch_.tmpl_embed + arch_.obj_embed), 0.0f);
  w.obj_logits.assign(size_t(n_vocab_), 0.0f);
  w.obj_probs.assign(size_t(n_vocab_), 0.0f);
  w.critic_h.assign(size_t(arch_.critic_hidden), 0.0f);
  w.critic_pre.assign(1, 0.0f);
  return w;
}

void Expert::raw_reset(Raw& w) const {
  std::fill(w.hidden.begin(), w.hidden.end(), 0.0f);
}

namespace {
// Mirrors the tape's affine op: matvec then a bias add in index order, so the
// two paths round identically.
void affine(const Tensor& W, const Tensor& b, const float* x, float* y) {
  kern::matvec(W.values.data(), W.rows(), W.cols(), x, y);
  for (int i = 0; i < W.rows(); ++i) y[size_t(i)] += b.values[size_t(i)];
}
}  // namespace

void Expert::raw_encode(Raw& w, const std::vector<int>& tokens,
                        const std::vector<float>& kg) const {
  if (int(kg.size()) != kg_bits_) throw ContractError("raw_encode: fact vector width mismatch");
  kern::GruDims dims{arch_.token_embed, arch_.gru_hidden};
  for (int tok : tokens) {
    const float* x = tok_embed_.value.values.data() + size_t(tok) * size_t(arch_.token_embed);
    kern::gru_step(dims, gru_wih_.value.values.data(), gru_bih_.value.values.data(),
                   gru_whh_.value.values.data(), gru_bhh_.value.values.data(), x,
                   w.hidden.data(), w.h2.data(), w.scratch.data());
    std::swap(w.hidden, w.h2);
  }
  affine(kg_w_.value, kg_b_.value, kg.data(), w.kgp.data());
  std::memcpy(w.cat.data(), w.hidden.data(), w.hidden.size() * sizeof(float));
  std::memcpy(w.cat.data() + w.hidden.size(), w.kgp.data(), w.kgp.size() * sizeof(float));
  affine(mix_w_.value, mix_b_.value, w.cat.data(), w.pre.data());
  kern::silu(w.pre.data(), arch_.state_dim, w.o.data());
}

void Expert::raw_template(Raw& w, const std::vector<uint8_t>& mask) const {
  affine(tmpl_w_.value, tmpl_b_.value, w.o.data(), w.tmpl_logits.data());
  kern::masked_softmax(w.tmpl_logits.data(), mask.data(), n_templates_, w.tmpl_probs.data());
}

void Expert::raw_object(Raw& w, int tmpl, int prev_obj, const std::vector<uint8_t>& mask) const {
  const int L = arch_.state_dim, TE = arch_.tmpl_embed, OE = arch_.obj_embed;
  std::memcpy(w.obj_cat.data(), w.o.data(), size_t(L) * sizeof(float));
  std::memcpy(w.obj_cat.data() + L,
              tmpl_embed_.value.values.data() + size_t(tmpl) * size_t(TE),
              size_t(TE) * sizeof(float));
  if (prev_obj >= 0)
    std::memcpy(w.obj_cat.data() + L + TE,
                obj_embed_.value.values.data() + size_t(prev_obj) * size_t(OE),
                size_t(OE) * sizeof(float));
  else
    std::memset(w.obj_cat.data() + L + TE, 0, size_t(OE) * sizeof(float));
  affine(obj_w_.value, obj_b_.value, w.obj_cat.data(), w.obj_logits.data());
  kern::masked_softmax(w.obj_logits.data(), mask.data(), n_vocab_, w.obj_probs.data());
}

float Expert::raw_value(Raw& w) const {
  affine(critic_w1_.value, critic_b1_.value, w.o.data(), w.critic_h.data());
  kern::silu(w.critic_h.data(), arch_.critic_hidden, w.critic_h.data());
  affine(critic_w2_.value, critic_b2_.value, w.critic_h.data(), w.critic_pre.data());
  w.value = w.critic_pre[0];
  return w.value;
}

void Expert::save(const std::string& path, uint64_t config_hash) const {
  nn::CheckpointMeta meta;
  meta.config_hash = config_hash;
  meta.spec_hash = spec_hash_;
  meta.role = role_;
  meta.dims = {{"token_embed", uint32_t(arch_.token_embed)},
               {"gru_hidden", uint32_t(arch_.gru_hidden)},
               {"state_dim", uint32_t(arch_.state_dim)},
               {"tmpl_embed", uint32_t(arch_.tmpl_embed)},
               {"obj_embed", uint32_t(arch_.obj_embed)},
               {"kg_proj", uint32_t(arch_.kg_proj)},
               {"critic_hidden", uint32_t(arch_.critic_hidden)},
               {"n_tokens", uint32_t(n_tokens_)},
               {"kg_bits", uint32_t(kg_bits_)},
               {"n_templates", uint32_t(n_templates_)},
               {"n_vocab", uint32_t(n_vocab_)}};
  nn::save_checkpoint(path, meta, params());
}

Expert Expert::load(const std::string& path, const tw::GameSpec& spec, int n_tokens,
                    int kg_bits) {
  nn::CheckpointMeta meta = nn::peek_checkpoint(path);
  if (meta.spec_hash != spec.hash)
    throw ConfigError(path + ": checkpoint was trained on a different game spec");
  if (int(meta.dim("n_tokens")) != n_tokens || int(meta.dim("kg_bits")) != kg_bits ||
      int(meta.dim("n_templates")) != spec.n_templates() ||
      int(meta.dim("n_vocab")) != spec.n_vocab())
    throw ConfigError(path + ": checkpoint dimensions do not match this game spec");

  ExpertArch arch;
  arch.token_embed = int(meta.dim("token_embed"));
  arch.gru_hidden = int(meta.dim("gru_hidden"));
  arch.state_dim = int(meta.dim("state_dim"));
  arch.tmpl_embed = int(meta.dim("tmpl_embed"));
  arch.obj_embed = int(meta.dim("obj_embed"));
  arch.kg_proj = int(meta.dim("kg_proj"));
  arch.critic_hidden = int(meta.dim("critic_hidden"));

  Expert e;
  e.role_ = meta.role;
  e.shape(spec, n_tokens, kg_bits, arch);
  nn::load_checkpoint(path, e.params());
  e.frozen_ = true;
  for (nn::ParamTensor* p : e.params()) e.frozen_ = e.frozen_ && p->frozen;
  return e;
}

}  // namespace guild::agent
