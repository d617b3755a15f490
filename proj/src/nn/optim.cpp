#include "guild/nn/optim.hpp"

#include <cmath>

#include "guild/errors.hpp"

namespace guild::nn {

void init_fan_in(ParamTensor& p, int fan_in, Rng& rng) {
  if (fan_in <= 0) throw ContractError("init_fan_in: bad fan_in");
  float bound = 1.0f / std::sqrt(float(fan_in));
  for (float& v : p.value.values) v = rng.uniform(-bound, bound);
}

Adam::Adam(std::vector<ParamTensor*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (ParamTensor* p : params_) {
    m_.push_back(Tensor::zeros(p->value.shape));
    v_.push_back(Tensor::zeros(p->value.shape));
  }
}

float Adam::step() {
  double sq = 0.0;
  for (ParamTensor* p : params_) {
    if (p->frozen) continue;
    for (float g : p->grad.values) sq += double(g) * double(g);
  }
  float norm = float(std::sqrt(sq));
  float scale = 1.0f;
  if (cfg_.clip_norm > 0.0f && norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;

  ++t_;
  float bc1 = 1.0f - std::pow(cfg_.beta1, float(t_));
  float bc2 = 1.0f - std::pow(cfg_.beta2, float(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    ParamTensor* p = params_[k];
    if (p->frozen) continue;
    float* w = p->value.values.data();
    const float* g = p->grad.values.data();
    float* m = m_[k].values.data();
    float* v = v_[k].values.data();
    int64_t n = p->value.size();
    for (int64_t i = 0; i < n; ++i) {
      float gi = g[i] * scale;
      m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * gi * gi;
      float mhat = m[i] / bc1;
      float vhat = v[i] / bc2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  return norm;
}

void Adam::zero_grad() {
  for (ParamTensor* p : params_)
    if (!p->frozen) p->zero_grad();
}

}  // namespace guild::nn
